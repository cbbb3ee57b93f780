"""Deterministic workload simulator.

Replays synthetic PR traces against the real scheduler and killer under two
policies: "baseline" (no supersession, no pre-build gating, mimicking systems
that process every change in full) and "lightsys" (supersession plus
fail-fast gating).  With a module cost model the run uses a virtual clock, so
results are exact and wall-clock independent.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .config import ServiceConfig
from .gateway import Dispatcher
from .model import (
    Action,
    CheckResult,
    CheckStatus,
    Group,
    PipelineResult,
    PipelineVerdict,
    PrEvent,
    PrTask,
)
from .plugins import builtin_descriptors, execution_plan, PluginStore
from .scheduler import Scheduler


class Policy(str, Enum):
    BASELINE = "baseline"
    LIGHTSYS = "lightsys"


@dataclass(frozen=True)
class SlotSpec:
    duration_s: float
    arrivals: int

    def __post_init__(self):
        if self.arrivals < 0:
            raise ValueError("arrivals must be >= 0")


@dataclass(frozen=True)
class WorkloadSpec:
    seed: int = 0
    slots: tuple[SlotSpec, ...] = (SlotSpec(duration_s=1800.0, arrivals=10),)
    duplication_fraction: float = 0.0
    prebuild_fail_fraction: float = 0.0
    module_cost_model: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in (
            ("duplication_fraction", self.duplication_fraction),
            ("prebuild_fail_fraction", self.prebuild_fail_fraction),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1]")

    @staticmethod
    def from_dict(doc: dict) -> "WorkloadSpec":
        return WorkloadSpec(
            seed=doc.get("seed", 0),
            slots=tuple(
                SlotSpec(duration_s=s["duration_s"], arrivals=s["arrivals"])
                for s in doc.get("slots", [{"duration_s": 1800.0, "arrivals": 10}])
            ),
            duplication_fraction=doc.get("duplication_fraction", 0.0),
            prebuild_fail_fraction=doc.get("prebuild_fail_fraction", 0.0),
            module_cost_model=dict(doc.get("module_cost_model", {})),
        )

    @staticmethod
    def load(path: str | Path) -> "WorkloadSpec":
        return WorkloadSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SimMetrics:
    policy: str = ""
    events_total: int = 0
    unique_prs: int = 0
    executed_pipelines: int = 0
    modules_executed: int = 0
    tasks_killed_superseded: int = 0
    tasks_killed_reclaimed: int = 0
    peak_concurrent_running: int = 0
    makespan_s: float = 0.0
    max_task_sojourn_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


SIM_REPO = "sim/repo"


def _fake_sha(seed: int, index: int) -> str:
    return hashlib.sha1(f"{seed}:{index}".encode()).hexdigest()


def generate_trace(spec: WorkloadSpec) -> list[PrEvent]:
    """Deterministic trace: arrivals in a slot share the slot-start timestamp,
    originals before resubmissions, so supersession can observe live
    predecessors.  Exactly floor(total x duplication_fraction) resubmissions.
    """
    rng = random.Random(spec.seed)
    events: list[PrEvent] = []
    next_pr = 1
    all_prs: list[int] = []
    emitted = 0
    dup_emitted = 0
    slot_start = 0.0
    index = 0
    for slot in spec.slots:
        quota_end = emitted + slot.arrivals
        dup_target_end = int(quota_end * spec.duplication_fraction)
        dup_this_slot = dup_target_end - dup_emitted
        originals = slot.arrivals - dup_this_slot
        slot_prs: list[int] = []
        for _ in range(max(0, originals)):
            pr = next_pr
            next_pr += 1
            slot_prs.append(pr)
            all_prs.append(pr)
            events.append(
                PrEvent(
                    repo_id=SIM_REPO,
                    pr_number=pr,
                    action=Action.OPENED,
                    head_commit=_fake_sha(spec.seed, index),
                    source_branch=f"feature/{pr}",
                    target_branch="main",
                    clone_url="sim://repo",
                    delivery_id=f"sim-{index}",
                    received_at=int(slot_start * 1e9),
                )
            )
            index += 1
        for _ in range(dup_this_slot):
            candidates = slot_prs or all_prs
            if not candidates:
                raise ValueError("duplication_fraction too high for first slot")
            pr = rng.choice(candidates)
            events.append(
                PrEvent(
                    repo_id=SIM_REPO,
                    pr_number=pr,
                    action=Action.SYNCHRONIZED,
                    head_commit=_fake_sha(spec.seed, index),
                    source_branch=f"feature/{pr}",
                    target_branch="main",
                    clone_url="sim://repo",
                    delivery_id=f"sim-{index}",
                    received_at=int(slot_start * 1e9),
                )
            )
            index += 1
        emitted += slot.arrivals
        dup_emitted += dup_this_slot
        slot_start += slot.duration_s
    return events


def trace_to_json(events: list[PrEvent]) -> str:
    return json.dumps(
        [
            {
                "repo_id": e.repo_id,
                "pr_number": e.pr_number,
                "action": e.action.value,
                "head_commit": e.head_commit,
                "source_branch": e.source_branch,
                "target_branch": e.target_branch,
                "clone_url": e.clone_url,
                "delivery_id": e.delivery_id,
                "received_at": e.received_at,
            }
            for e in events
        ],
        indent=2,
    ) + "\n"


def trace_from_json(text: str) -> list[PrEvent]:
    return [
        PrEvent(
            repo_id=d["repo_id"],
            pr_number=d["pr_number"],
            action=Action(d["action"]),
            head_commit=d["head_commit"],
            source_branch=d["source_branch"],
            target_branch=d["target_branch"],
            clone_url=d["clone_url"],
            delivery_id=d["delivery_id"],
            received_at=d["received_at"],
        )
        for d in json.loads(text)
    ]


class _VirtualEngine:
    """Single-threaded event heap; arrivals sort before completions at
    equal timestamps so same-instant resubmissions supersede first."""

    ARRIVAL = 0
    COMPLETION = 1

    def __init__(self):
        self.now = 0.0
        self._heap: list[tuple[float, int, int, Callable[[], None]]] = []
        self._seq = 0

    def at(self, when: float, kind: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (when, kind, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            when, _, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, when)
            fn()


def _task_fails_prebuild(spec: WorkloadSpec, task: PrTask) -> bool:
    digest = hashlib.sha256(
        f"{spec.seed}:{task.repo_id}:{task.pr_number}:{task.generation}".encode()
    ).digest()
    fraction = int.from_bytes(digest[:8], "big") / float(1 << 64)
    return fraction < spec.prebuild_fail_fraction


def _failing_module_index(spec: WorkloadSpec, task: PrTask, plan_len: int) -> int:
    digest = hashlib.sha256(
        f"fail-at:{spec.seed}:{task.repo_id}:{task.pr_number}:{task.generation}".encode()
    ).digest()
    return int.from_bytes(digest[:4], "big") % plan_len


def _parallel_makespan(costs: list[float], workers: int) -> float:
    """Greedy list scheduling in plan order across `workers` lanes."""
    lanes = [0.0] * max(1, workers)
    for cost in costs:
        lanes[lanes.index(min(lanes))] += cost
    return max(lanes)


def replay(
    trace: list[PrEvent],
    policy: Policy,
    config: Optional[ServiceConfig] = None,
    spec: Optional[WorkloadSpec] = None,
) -> SimMetrics:
    """Virtual-clock replay of a trace under one policy."""
    if not trace:
        raise ValueError("trace must be nonempty")
    config = config or ServiceConfig()
    spec = spec or WorkloadSpec()
    store = PluginStore(descriptors=tuple(builtin_descriptors()))
    pre_plan = execution_plan(store, Group.PRE_BUILD)
    post_plan = execution_plan(store, Group.POST_BUILD)
    cost = lambda name: float(spec.module_cost_model.get(name, 0.0))

    engine = _VirtualEngine()
    sojourns: list[float] = []
    executed: list[PipelineResult] = []

    def simulate_pipeline(task: PrTask) -> tuple[PipelineResult, float]:
        fails = _task_fails_prebuild(spec, task)
        gated = policy is Policy.LIGHTSYS
        pre_results: list[CheckResult] = []
        duration = 0.0
        if fails:
            stop = _failing_module_index(spec, task, len(pre_plan))
            for i, d in enumerate(pre_plan):
                if gated and i > stop:
                    break
                status = CheckStatus.FAIL if i == stop else CheckStatus.PASS
                pre_results.append(
                    CheckResult(
                        plugin_name=d.name,
                        status=status,
                        duration_ms=int(cost(d.name) * 1000),
                    )
                )
                duration += cost(d.name)
            if gated:
                return (
                    PipelineResult(
                        task_id=task.task_id,
                        prebuild_results=tuple(pre_results),
                        postbuild_results=(),
                        verdict=PipelineVerdict.PREBUILD_FAILED,
                    ),
                    duration,
                )
        else:
            for d in pre_plan:
                pre_results.append(
                    CheckResult(
                        plugin_name=d.name,
                        status=CheckStatus.PASS,
                        duration_ms=int(cost(d.name) * 1000),
                    )
                )
                duration += cost(d.name)
        post_results = [
            CheckResult(
                plugin_name=d.name,
                status=CheckStatus.PASS,
                duration_ms=int(cost(d.name) * 1000),
            )
            for d in post_plan
        ]
        duration += _parallel_makespan(
            [cost(d.name) for d in post_plan], min(4, len(post_plan))
        )
        # baseline surfaces a pre-build failure but already did all the work
        verdict = (
            PipelineVerdict.POSTBUILD_FAILED
            if fails and not gated
            else PipelineVerdict.SUCCESS
        )
        return (
            PipelineResult(
                task_id=task.task_id,
                prebuild_results=tuple(pre_results),
                postbuild_results=tuple(post_results),
                verdict=verdict,
            ),
            duration,
        )

    def launcher(task: PrTask) -> None:
        result, duration = simulate_pipeline(task)

        def complete() -> None:
            if scheduler.report_finished(task.task_id, result):
                executed.append(result)
                sojourns.append(engine.now - task.submitted_at)

        engine.at(engine.now + duration, _VirtualEngine.COMPLETION, complete)

    scheduler = Scheduler(
        config.max_run_queue,
        launcher=launcher,
        supersession_enabled=(policy is Policy.LIGHTSYS),
        clock=lambda: engine.now,
    )
    dispatcher = Dispatcher(scheduler)

    for event in trace:
        when = event.received_at / 1e9

        def arrive(ev: PrEvent = event) -> None:
            dispatcher.dispatch(ev)

        engine.at(when, _VirtualEngine.ARRIVAL, arrive)
    engine.run()

    counters = scheduler.counters
    return SimMetrics(
        policy=policy.value,
        events_total=len(trace),
        unique_prs=len({(e.repo_id, e.pr_number) for e in trace}),
        executed_pipelines=len(executed),
        modules_executed=sum(r.cpu_proxy for r in executed),
        tasks_killed_superseded=counters.killed_superseded,
        tasks_killed_reclaimed=counters.killed_reclaimed,
        peak_concurrent_running=counters.peak_running,
        makespan_s=engine.now,
        max_task_sojourn_s=max(sojourns, default=0.0),
    )


@dataclass
class ComparisonReport:
    spec: WorkloadSpec
    baseline: SimMetrics
    lightsys: SimMetrics
    curve: list[dict]

    @property
    def module_saving(self) -> float:
        if self.baseline.modules_executed == 0:
            return 0.0
        return 1.0 - self.lightsys.modules_executed / self.baseline.modules_executed

    def as_dict(self) -> dict:
        return {
            "baseline": self.baseline.as_dict(),
            "lightsys": self.lightsys.as_dict(),
            "savings": {
                "modules_executed": self.module_saving,
                "executed_pipelines": (
                    1.0 - self.lightsys.executed_pipelines / self.baseline.executed_pipelines
                    if self.baseline.executed_pipelines
                    else 0.0
                ),
            },
            "curve": self.curve,
        }

    def table(self) -> str:
        rows = [
            ("metric", "baseline", "lightsys"),
            ("events_total", self.baseline.events_total, self.lightsys.events_total),
            ("executed_pipelines", self.baseline.executed_pipelines, self.lightsys.executed_pipelines),
            ("modules_executed", self.baseline.modules_executed, self.lightsys.modules_executed),
            ("tasks_killed_superseded", self.baseline.tasks_killed_superseded, self.lightsys.tasks_killed_superseded),
            ("peak_concurrent_running", self.baseline.peak_concurrent_running, self.lightsys.peak_concurrent_running),
            ("makespan_s", f"{self.baseline.makespan_s:.1f}", f"{self.lightsys.makespan_s:.1f}"),
            ("max_task_sojourn_s", f"{self.baseline.max_task_sojourn_s:.1f}", f"{self.lightsys.max_task_sojourn_s:.1f}"),
        ]
        width = max(len(str(c)) for row in rows for c in row) + 2
        lines = ["".join(str(c).ljust(width) for c in row) for row in rows]
        lines.append(f"module saving: {self.module_saving:.1%}")
        return "\n".join(lines)


def compare(
    spec: WorkloadSpec,
    config: Optional[ServiceConfig] = None,
    curve_max_arrivals: int = 0,
) -> ComparisonReport:
    """Run both policies on one trace; also emit makespan-vs-arrivals data."""
    config = config or ServiceConfig()
    trace = generate_trace(spec)
    baseline = replay(trace, Policy.BASELINE, config, spec)
    lightsys = replay(trace, Policy.LIGHTSYS, config, spec)

    curve: list[dict] = []
    max_arrivals = curve_max_arrivals or min(20, max(s.arrivals for s in spec.slots))
    slot_duration = spec.slots[0].duration_s
    for arrivals in range(1, max_arrivals + 1):
        sub_spec = WorkloadSpec(
            seed=spec.seed,
            slots=(SlotSpec(duration_s=slot_duration, arrivals=arrivals),),
            duplication_fraction=spec.duplication_fraction,
            prebuild_fail_fraction=spec.prebuild_fail_fraction,
            module_cost_model=dict(spec.module_cost_model),
        )
        sub_trace = generate_trace(sub_spec)
        if not sub_trace:
            continue
        curve.append(
            {
                "arrivals": arrivals,
                "makespan_baseline_s": replay(
                    sub_trace, Policy.BASELINE, config, sub_spec
                ).makespan_s,
                "makespan_lightsys_s": replay(
                    sub_trace, Policy.LIGHTSYS, config, sub_spec
                ).makespan_s,
            }
        )
    return ComparisonReport(spec=spec, baseline=baseline, lightsys=lightsys, curve=curve)


def write_metrics(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_curve_csv(path: str | Path, curve: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["arrivals", "makespan_baseline_s", "makespan_lightsys_s"]
        )
        writer.writeheader()
        writer.writerows(curve)
