"""Core domain types and the legal PR task state-transition table."""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

_HEX40_RE = re.compile(r"^[0-9a-f]{40}$")


class Action(str, Enum):
    OPENED = "opened"
    SYNCHRONIZED = "synchronized"
    CLOSED = "closed"


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    KILLED = "killed"


class Phase(str, Enum):
    READY = "ready"
    RUN = "run"
    WAIT = "wait"
    HANGING = "hanging"
    EXIT = "exit"


@dataclass(frozen=True)
class TaskState:
    """A node in the task lifecycle graph.

    Exit states carry the verdict; all other phases have verdict None.
    """

    phase: Phase
    verdict: Optional[Verdict] = None

    def __post_init__(self):
        if self.phase is Phase.EXIT and self.verdict is None:
            raise ValueError("exit state requires a verdict")
        if self.phase is not Phase.EXIT and self.verdict is not None:
            raise ValueError("verdict only allowed on exit states")

    @property
    def terminal(self) -> bool:
        return self.phase is Phase.EXIT

    def __str__(self) -> str:
        if self.terminal:
            return f"exit({self.verdict.value})"
        return self.phase.value


READY = TaskState(Phase.READY)
RUN = TaskState(Phase.RUN)
WAIT = TaskState(Phase.WAIT)
HANGING = TaskState(Phase.HANGING)
EXIT_PASS = TaskState(Phase.EXIT, Verdict.PASS)
EXIT_FAIL = TaskState(Phase.EXIT, Verdict.FAIL)
EXIT_KILLED = TaskState(Phase.EXIT, Verdict.KILLED)

# The complete legal edge set.  Exit states are terminal: no outgoing edges.
LEGAL_TRANSITIONS: frozenset[tuple[TaskState, TaskState]] = frozenset(
    {
        (READY, RUN),
        (RUN, WAIT),
        (WAIT, RUN),
        (RUN, EXIT_PASS),
        (RUN, EXIT_FAIL),
        (READY, HANGING),
        (RUN, HANGING),
        (WAIT, HANGING),
        (HANGING, EXIT_KILLED),
    }
)


def validate_transition(src: TaskState, dst: TaskState) -> bool:
    """Return True iff (src, dst) is a legal lifecycle edge.

    Total function: never raises for well-formed states.
    """
    return (src, dst) in LEGAL_TRANSITIONS


def parse_state(text: str) -> TaskState:
    """Inverse of str(TaskState), used when replaying journals."""
    m = re.fullmatch(r"exit\((pass|fail|killed)\)", text)
    if m:
        return TaskState(Phase.EXIT, Verdict(m.group(1)))
    return TaskState(Phase(text))


@dataclass(frozen=True)
class PrEvent:
    """A parsed webhook notification for a pull request."""

    repo_id: str
    pr_number: int
    action: Action
    head_commit: str
    source_branch: str
    target_branch: str
    clone_url: str
    delivery_id: str
    received_at: int  # monotonic ns

    def __post_init__(self):
        if self.pr_number < 1:
            raise ValueError("pr_number must be >= 1")
        if not _HEX40_RE.fullmatch(self.head_commit):
            raise ValueError(f"bad head_commit: {self.head_commit!r}")


class Tier(str, Enum):
    BASE = "base"
    GOOD = "good"
    STAGING = "staging"


class Group(str, Enum):
    PRE_BUILD = "pre"
    POST_BUILD = "post"


class PluginKind(str, Enum):
    BUILTIN = "builtin"
    EXTERNAL = "external"


@dataclass(frozen=True)
class PluginDescriptor:
    """One check module as the orchestrator sees it."""

    name: str
    tier: Tier
    group: Group
    kind: PluginKind
    timeout_seconds: int = 600
    exec_path: Optional[str] = None
    enabled: bool = True
    order_index: int = 0

    def __post_init__(self):
        if self.timeout_seconds < 1:
            raise ValueError("timeout_seconds must be >= 1")
        if self.kind is PluginKind.EXTERNAL and not self.exec_path:
            raise ValueError(f"external plugin {self.name} needs exec_path")

    @property
    def blocking(self) -> bool:
        """Staging-tier results are advisory; base/good failures gate."""
        return self.tier is not Tier.STAGING


class CheckStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"
    TIMED_OUT = "timed_out"
    CRASHED = "crashed"


REPORT_TEXT_LIMIT = 64 * 1024
_TRUNCATION_SUFFIX = "\n[truncated]"


def bound_report_text(text: str) -> str:
    """Cap report text at 64 KiB with an explicit truncation marker."""
    if len(text) <= REPORT_TEXT_LIMIT:
        return text
    return text[: REPORT_TEXT_LIMIT - len(_TRUNCATION_SUFFIX)] + _TRUNCATION_SUFFIX


@dataclass(frozen=True)
class CheckResult:
    plugin_name: str
    status: CheckStatus
    duration_ms: int = 0
    report_text: str = ""
    artifact_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")
        if self.status is CheckStatus.SKIPPED and self.duration_ms != 0:
            raise ValueError("skipped results carry zero duration")
        object.__setattr__(self, "report_text", bound_report_text(self.report_text))


class PipelineVerdict(str, Enum):
    SUCCESS = "success"
    PREBUILD_FAILED = "prebuild_failed"
    POSTBUILD_FAILED = "postbuild_failed"
    KILLED = "killed"


@dataclass(frozen=True)
class PipelineResult:
    task_id: int
    prebuild_results: tuple[CheckResult, ...]
    postbuild_results: tuple[CheckResult, ...]
    verdict: PipelineVerdict

    def __post_init__(self):
        if self.verdict is PipelineVerdict.PREBUILD_FAILED and self.postbuild_results:
            raise ValueError("prebuild failure must leave postbuild empty")

    @property
    def cpu_proxy(self) -> int:
        """Count of module invocations actually executed (Skipped excluded)."""
        return sum(
            1
            for r in self.prebuild_results + self.postbuild_results
            if r.status is not CheckStatus.SKIPPED
        )


@dataclass
class PrTask:
    """A schedulable unit of CI work.

    Mutation is confined to the scheduler; everything handed outward is a
    copy or an immutable value.
    """

    task_id: int
    repo_id: str
    pr_number: int
    generation: int
    head_commit: str
    source_branch: str = ""
    target_branch: str = ""
    clone_url: str = ""
    state: TaskState = READY
    priority: int = 0
    submitted_at: float = field(default_factory=time.monotonic)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    workspace_path: Optional[str] = None
    child_process_ids: set[int] = field(default_factory=set)
    pipeline_result: Optional[PipelineResult] = None
    kill_reason: Optional[str] = None

    def __post_init__(self):
        if self.pr_number < 1:
            raise ValueError("pr_number must be >= 1")
        if self.generation < 1:
            raise ValueError("generation must be >= 1")

    @property
    def pr_key(self) -> tuple[str, int]:
        return (self.repo_id, self.pr_number)
