"""PR scheduler and killer.

Owns all task state.  Every mutation happens under one lock (the serialized
command channel); worker launch and process-tree termination run outside the
lock so slow kills never stall admissions.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import procutil
from .errors import IllegalState, WaitQueueFull
from .model import (
    EXIT_FAIL,
    EXIT_KILLED,
    EXIT_PASS,
    HANGING,
    READY,
    RUN,
    WAIT,
    Phase,
    PipelineResult,
    PipelineVerdict,
    PrTask,
    TaskState,
    validate_transition,
)

Launcher = Callable[[PrTask], None]
Observer = Callable[[int, TaskState, TaskState, Optional[str]], None]
TaskHook = Callable[[PrTask], None]


@dataclass
class SchedulerCounters:
    enqueued: int = 0
    exited_pass: int = 0
    exited_fail: int = 0
    killed_superseded: int = 0
    killed_cancelled: int = 0
    killed_reclaimed: int = 0
    killed_shutdown: int = 0
    peak_running: int = 0

    @property
    def killed_total(self) -> int:
        return (
            self.killed_superseded
            + self.killed_cancelled
            + self.killed_reclaimed
            + self.killed_shutdown
        )


@dataclass
class SchedulerSnapshot:
    wait_queue: list[int]
    run_queue: list[tuple[int, int]]  # (task_id, priority)
    states: dict[int, str]
    counters: SchedulerCounters
    live: int = 0

    def as_dict(self) -> dict:
        return {
            "wait_queue": self.wait_queue,
            "run_queue": [{"task_id": t, "priority": p} for t, p in self.run_queue],
            "states": {str(k): v for k, v in self.states.items()},
            "live": self.live,
            "counters": {
                "enqueued": self.counters.enqueued,
                "exited_pass": self.counters.exited_pass,
                "exited_fail": self.counters.exited_fail,
                "killed_superseded": self.counters.killed_superseded,
                "killed_cancelled": self.counters.killed_cancelled,
                "killed_reclaimed": self.counters.killed_reclaimed,
                "killed_shutdown": self.counters.killed_shutdown,
                "peak_running": self.counters.peak_running,
            },
        }


class Scheduler:
    """FIFO wait queue + bounded run queue + supersession/reclamation killer.

    Collaborators are injected:
      launcher          called (outside the lock) when a task enters Run
      observer          transition listener, e.g. the journal
      process_killer    terminates a task's registered process groups
      resource_releaser frees workspaces/build roots on the kill path
      clock             time source (virtual in simulation)
    """

    def __init__(
        self,
        max_run_queue: int,
        *,
        max_wait_queue: Optional[int] = None,
        launcher: Optional[Launcher] = None,
        observer: Optional[Observer] = None,
        process_killer: Optional[TaskHook] = None,
        resource_releaser: Optional[TaskHook] = None,
        supersession_enabled: bool = True,
        clock: Callable[[], float] = time.monotonic,
    ):
        if max_run_queue < 1:
            raise ValueError("max_run_queue must be >= 1")
        self.max_run_queue = max_run_queue
        self.max_wait_queue = max_wait_queue
        self.launcher = launcher or (lambda task: None)
        self.observer = observer
        self.process_killer = process_killer or self._default_process_killer
        self.resource_releaser = resource_releaser or (lambda task: None)
        self.supersession_enabled = supersession_enabled
        self.clock = clock

        self._lock = threading.Lock()
        self._quiet = threading.Condition(self._lock)
        self._tasks: dict[int, PrTask] = {}
        self._wait: list[int] = []  # admission picks (priority, seq) minimum
        self._seq: dict[int, int] = {}
        self._next_seq = 0
        self._running: set[int] = set()
        self._generations: dict[tuple[str, int], int] = {}
        self._next_task_id = 1
        self.counters = SchedulerCounters()

    # -- id and generation allocation ---------------------------------------

    def allocate_task_id(self) -> int:
        with self._lock:
            tid = self._next_task_id
            self._next_task_id += 1
            return tid

    def next_generation(self, repo_id: str, pr_number: int) -> int:
        with self._lock:
            return self._generations.get((repo_id, pr_number), 0) + 1

    def task(self, task_id: int) -> PrTask:
        with self._lock:
            return self._tasks[task_id]

    # -- transitions ---------------------------------------------------------

    @staticmethod
    def _default_process_killer(task: PrTask) -> None:
        if task.child_process_ids:
            procutil.terminate_groups(set(task.child_process_ids))

    def _transition(self, task: PrTask, dst: TaskState, reason: Optional[str] = None) -> None:
        src = task.state
        if not validate_transition(src, dst):
            raise IllegalState(f"task {task.task_id}: illegal {src} -> {dst}")
        task.state = dst
        now = self.clock()
        if dst.phase is Phase.RUN and task.started_at is None:
            task.started_at = now
        if dst.terminal:
            task.finished_at = now
            task.child_process_ids.clear()
        if self.observer is not None:
            self.observer(task.task_id, src, dst, reason)

    def _live_tasks(self, repo_id: str, pr_number: int) -> list[PrTask]:
        return [
            t
            for t in self._tasks.values()
            if t.repo_id == repo_id and t.pr_number == pr_number and not t.state.terminal
        ]

    # -- submission / admission ----------------------------------------------

    def submit(self, task: PrTask) -> list[int]:
        """Enqueue a Ready task; returns ids of tasks it superseded."""
        if task.state is not READY:
            raise IllegalState(f"submit requires Ready, got {task.state}")
        task.submitted_at = self.clock()
        killed: list[int] = []
        if self.supersession_enabled:
            killed = self.supersede(task.repo_id, task.pr_number, task)
        with self._lock:
            if (
                self.max_wait_queue is not None
                and len(self._wait) >= self.max_wait_queue
            ):
                raise WaitQueueFull(f"wait queue at capacity {self.max_wait_queue}")
            self._tasks[task.task_id] = task
            self._generations[task.pr_key] = max(
                self._generations.get(task.pr_key, 0), task.generation
            )
            self._wait.append(task.task_id)
            self._seq[task.task_id] = self._next_seq
            self._next_seq += 1
            self.counters.enqueued += 1
            admitted = self._admit_locked()
        self._launch(admitted)
        return killed

    def _admit_locked(self) -> list[PrTask]:
        admitted: list[PrTask] = []
        while self._wait and len(self._running) < self.max_run_queue:
            tid = min(
                self._wait,
                key=lambda t: (self._tasks[t].priority, self._seq[t]),
            )
            self._wait.remove(tid)
            task = self._tasks[tid]
            self._transition(task, RUN)
            self._running.add(tid)
            self.counters.peak_running = max(self.counters.peak_running, len(self._running))
            admitted.append(task)
        return admitted

    def _launch(self, admitted: list[PrTask]) -> None:
        for task in admitted:
            self.launcher(task)

    def admit(self) -> Optional[int]:
        """Explicit admission step; returns the admitted task id, if any."""
        with self._lock:
            admitted = self._admit_locked()
        self._launch(admitted)
        return admitted[0].task_id if admitted else None

    # -- wait-state excursions (resource locks) -------------------------------

    def mark_waiting(self, task_id: int) -> None:
        with self._lock:
            task = self._tasks[task_id]
            if task.state is RUN:
                self._transition(task, WAIT)

    def mark_running(self, task_id: int) -> None:
        with self._lock:
            task = self._tasks[task_id]
            if task.state is WAIT:
                self._transition(task, RUN)

    # -- process registry ------------------------------------------------------

    def register_process(self, task_id: int, pgid: int) -> bool:
        """Returns False if the task is no longer live (caller should abort)."""
        with self._lock:
            task = self._tasks[task_id]
            if task.state.terminal or task.state is HANGING:
                return False
            task.child_process_ids.add(pgid)
            return True

    def unregister_process(self, task_id: int, pgid: int) -> None:
        with self._lock:
            self._tasks[task_id].child_process_ids.discard(pgid)

    # -- kill paths -------------------------------------------------------------

    def _begin_kill_locked(self, task: PrTask, reason: str) -> bool:
        """Move a live task to Hanging and detach it from the queues."""
        if task.state.terminal or task.state is HANGING:
            return False
        self._transition(task, HANGING, reason)
        task.kill_reason = reason
        if task.task_id in self._wait:
            self._wait.remove(task.task_id)
        self._running.discard(task.task_id)
        return True

    def _finish_kill(self, victims: list[PrTask], reason: str) -> None:
        """Outside the lock: reap processes and resources, then exit(killed)."""
        for task in victims:
            self.process_killer(task)
            self.resource_releaser(task)
        with self._lock:
            for task in victims:
                self._transition(task, EXIT_KILLED, reason)
                if reason == "superseded":
                    self.counters.killed_superseded += 1
                elif reason == "cancelled":
                    self.counters.killed_cancelled += 1
                elif reason == "reclaimed":
                    self.counters.killed_reclaimed += 1
                else:
                    self.counters.killed_shutdown += 1
            admitted = self._admit_locked()
            self._quiet.notify_all()
        self._launch(admitted)

    def supersede(self, repo_id: str, pr_number: int, new_task: PrTask) -> list[int]:
        """Kill every live lower-generation task for the PR."""
        with self._lock:
            victims = [
                t
                for t in self._live_tasks(repo_id, pr_number)
                if t.generation < new_task.generation
            ]
            victims = [t for t in victims if self._begin_kill_locked(t, "superseded")]
        self._finish_kill(victims, "superseded")
        return [t.task_id for t in victims]

    def cancel(self, repo_id: str, pr_number: int) -> list[int]:
        """PR closed: every live task follows Hanging -> Exit(Killed)."""
        with self._lock:
            victims = [
                t
                for t in self._live_tasks(repo_id, pr_number)
                if self._begin_kill_locked(t, "cancelled")
            ]
        self._finish_kill(victims, "cancelled")
        return [t.task_id for t in victims]

    def reclaim_oldest(self) -> Optional[int]:
        """LRU reclamation: kill the running task with the oldest started_at."""
        with self._lock:
            running = [self._tasks[t] for t in self._running]
            if not running:
                return None
            victim = min(running, key=lambda t: (t.started_at, t.task_id))
            if not self._begin_kill_locked(victim, "reclaimed"):
                return None
        self._finish_kill([victim], "reclaimed")
        return victim.task_id

    def shutdown(self) -> list[int]:
        """Drain everything through the Hanging path (daemon shutdown)."""
        with self._lock:
            victims = [
                t
                for t in self._tasks.values()
                if self._begin_kill_locked(t, "shutdown")
            ]
        self._finish_kill(victims, "shutdown")
        return [t.task_id for t in victims]

    # -- completion ---------------------------------------------------------------

    def _finish_locked(self, task: PrTask, result: PipelineResult) -> list[PrTask]:
        task.pipeline_result = result
        if result.verdict is PipelineVerdict.SUCCESS:
            self._transition(task, EXIT_PASS)
            self.counters.exited_pass += 1
        else:
            self._transition(task, EXIT_FAIL, result.verdict.value)
            self.counters.exited_fail += 1
        self._running.discard(task.task_id)
        admitted = self._admit_locked()
        self._quiet.notify_all()
        return admitted

    def on_task_finished(self, task_id: int, result: PipelineResult) -> None:
        """Record a pipeline outcome for a Run task; frees the slot."""
        with self._lock:
            task = self._tasks[task_id]
            if task.state is not RUN:
                raise IllegalState(
                    f"on_task_finished for task {task_id} in state {task.state}"
                )
            admitted = self._finish_locked(task, result)
        self._launch(admitted)

    def report_finished(self, task_id: int, result: PipelineResult) -> bool:
        """Worker-side completion: drops the result if the task was killed."""
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None or task.state is not RUN:
                return False
            admitted = self._finish_locked(task, result)
        self._launch(admitted)
        return True

    # -- introspection ----------------------------------------------------------

    def live_task_ids(self, repo_id: Optional[str] = None, pr_number: Optional[int] = None) -> list[int]:
        with self._lock:
            return [
                t.task_id
                for t in self._tasks.values()
                if not t.state.terminal
                and (repo_id is None or t.repo_id == repo_id)
                and (pr_number is None or t.pr_number == pr_number)
            ]

    def snapshot(self) -> SchedulerSnapshot:
        with self._lock:
            live = sum(1 for t in self._tasks.values() if not t.state.terminal)
            return SchedulerSnapshot(
                wait_queue=sorted(
                    self._wait,
                    key=lambda t: (self._tasks[t].priority, self._seq[t]),
                ),
                run_queue=[(t, self._tasks[t].priority) for t in sorted(self._running)],
                states={tid: str(t.state) for tid, t in self._tasks.items()},
                counters=SchedulerCounters(**vars(self.counters)),
                live=live,
            )

    def running_count(self) -> int:
        with self._lock:
            return len(self._running)

    def quiesce(self, timeout: float = 60.0) -> bool:
        """Block until no task is live (or timeout); returns success."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while any(not t.state.terminal for t in self._tasks.values()):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._quiet.wait(remaining)
            return True
