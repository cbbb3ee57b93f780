"""Pipeline execution: pre-build checks gate post-build builds.

Each external plugin is spawned in its own process group under the contract
documented in README (CI_* environment, cwd = workspace, stdin closed,
exit 0 = pass).  Blocking failures fail fast; staging results are advisory.
"""

from __future__ import annotations

import logging
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import builder, checks, procutil
from .codehost import STATUS_MAP, NullCodeHost
from .config import ServiceConfig
from .errors import CommentFailed, ReportFailed, WorkspaceMissing
from .model import (
    CheckResult,
    CheckStatus,
    Group,
    PipelineResult,
    PipelineVerdict,
    PluginDescriptor,
    PluginKind,
    PrTask,
)
from .plugins import PluginStore, execution_plan

log = logging.getLogger(__name__)

_BLOCKING_BAD = (CheckStatus.FAIL, CheckStatus.TIMED_OUT, CheckStatus.CRASHED)


class TaskKilled(Exception):
    """The task was superseded/cancelled while its pipeline ran."""


@dataclass
class InvocationContext:
    """Everything a plugin invocation needs, decoupled from the scheduler."""

    task: PrTask
    config: ServiceConfig
    workspace: Optional[str] = None
    build_root: Optional[Path] = None
    report_dir: Optional[str] = None
    changes: Optional[checks.ChangeSet] = None
    notifier: object = field(default_factory=NullCodeHost)
    register_pgid: Callable[[int], bool] = lambda pgid: True
    unregister_pgid: Callable[[int], None] = lambda pgid: None
    cancelled: Callable[[], bool] = lambda: False
    parallelism: int = 4

    def environment(self, descriptor: PluginDescriptor) -> dict[str, str]:
        env = dict(os.environ)
        env.update(
            {
                "CI_WORKSPACE": self.workspace or "",
                "CI_REPO": self.task.repo_id,
                "CI_PR_NUMBER": str(self.task.pr_number),
                "CI_HEAD_SHA": self.task.head_commit,
                "CI_GROUP": descriptor.group.value,
                "CI_REPORT_DIR": self.report_dir or "",
                "CI_TARGET_BRANCH": self.task.target_branch,
            }
        )
        if descriptor.group is Group.POST_BUILD and self.build_root is not None:
            env["CI_BUILD_ROOT"] = str(self.build_root)
        return env


def run_external_plugin(descriptor: PluginDescriptor, ctx: InvocationContext) -> CheckResult:
    """Spawn, supervise, and reap one external plugin process group."""
    started = time.monotonic()
    try:
        proc = procutil.spawn_group(
            [descriptor.exec_path],
            cwd=ctx.workspace or ".",
            env=ctx.environment(descriptor),
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
    except OSError as exc:
        return CheckResult(
            plugin_name=descriptor.name,
            status=CheckStatus.CRASHED,
            duration_ms=max(0, int((time.monotonic() - started) * 1000)),
            report_text=f"failed to spawn {descriptor.exec_path}: {exc}",
        )
    pgid = proc.pid
    if not ctx.register_pgid(pgid):
        procutil.terminate_group(pgid, grace=0.5)
        procutil.wait_reaped(proc, timeout=2.0)
        raise TaskKilled(ctx.task.task_id)
    try:
        try:
            out, _ = proc.communicate(timeout=descriptor.timeout_seconds)
        except subprocess.TimeoutExpired:
            procutil.terminate_group(pgid)
            try:
                out, _ = proc.communicate(timeout=procutil.GRACE_SECONDS + 2)
            except subprocess.TimeoutExpired:
                out = b""
            return CheckResult(
                plugin_name=descriptor.name,
                status=CheckStatus.TIMED_OUT,
                duration_ms=max(
                    descriptor.timeout_seconds * 1000,
                    int((time.monotonic() - started) * 1000),
                ),
                report_text=(out or b"").decode("utf-8", "replace"),
            )
    finally:
        ctx.unregister_pgid(pgid)
    duration_ms = max(0, int((time.monotonic() - started) * 1000))
    text = (out or b"").decode("utf-8", "replace")
    if proc.returncode == 0:
        status = CheckStatus.PASS
    elif proc.returncode == 2:
        # plugin contract violation, distinct from an ordinary check failure
        status = CheckStatus.CRASHED
    else:
        status = CheckStatus.FAIL
    return CheckResult(
        plugin_name=descriptor.name,
        status=status,
        duration_ms=duration_ms,
        report_text=text,
    )


def run_plugin(descriptor: PluginDescriptor, ctx: InvocationContext) -> CheckResult:
    if ctx.cancelled():
        raise TaskKilled(ctx.task.task_id)
    if descriptor.kind is PluginKind.EXTERNAL:
        return run_external_plugin(descriptor, ctx)
    if descriptor.group is Group.POST_BUILD:
        if ctx.build_root is None:
            raise WorkspaceMissing(f"no build root for task {ctx.task.task_id}")
        return builder.run_stub_build(
            descriptor, ctx.build_root, ctx.config.stub_build, cancelled=ctx.cancelled
        )
    changes = ctx.changes
    if changes is None:
        raise WorkspaceMissing(f"no change set for task {ctx.task.task_id}")
    return checks.run_builtin_check(descriptor.name, changes, ctx.config.thresholds)


def terminate_task_processes(task: PrTask) -> None:
    """Reap every registered process group of a task entering Hanging."""
    pgids = set(task.child_process_ids)
    if pgids:
        procutil.terminate_groups(pgids)
    task.child_process_ids.clear()


def _notify_report(ctx: InvocationContext, plugin_name: str, state: str) -> None:
    try:
        ctx.notifier.report(ctx.task.repo_id, ctx.task.head_commit, plugin_name, state)
    except (CommentFailed, ReportFailed) as exc:
        log.warning("status report for %s failed: %s", plugin_name, exc)


def _run_one(descriptor: PluginDescriptor, ctx: InvocationContext) -> CheckResult:
    _notify_report(ctx, descriptor.name, "pending")
    result = run_plugin(descriptor, ctx)
    _notify_report(ctx, descriptor.name, STATUS_MAP[result.status])
    return result


def run_pipeline(task: PrTask, store: PluginStore, ctx: InvocationContext) -> PipelineResult:
    """Execute the task's full two-phase pipeline and assemble the result."""
    if ctx.workspace is None and ctx.changes is None:
        raise WorkspaceMissing(f"task {task.task_id} has no workspace")
    if ctx.changes is None and ctx.workspace is not None:
        ctx.changes = checks.changeset_from_workspace(ctx.workspace, task.target_branch)

    prebuild: list[CheckResult] = []
    prebuild_failed = False
    for descriptor in execution_plan(store, Group.PRE_BUILD):
        result = _run_one(descriptor, ctx)
        prebuild.append(result)
        if descriptor.blocking and result.status in _BLOCKING_BAD:
            prebuild_failed = True
            break

    if prebuild_failed:
        pipeline = PipelineResult(
            task_id=task.task_id,
            prebuild_results=tuple(prebuild),
            postbuild_results=(),
            verdict=PipelineVerdict.PREBUILD_FAILED,
        )
        _comment_on_failure(ctx, pipeline)
        return pipeline

    post_plan = execution_plan(store, Group.POST_BUILD)
    postbuild: list[CheckResult] = []
    if post_plan:
        workers = max(1, min(ctx.parallelism, len(post_plan)))
        if workers == 1:
            postbuild = [_run_one(d, ctx) for d in post_plan]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_one, d, ctx) for d in post_plan]
                postbuild = [f.result() for f in futures]

    post_failed = any(
        d.blocking and r.status in _BLOCKING_BAD
        for d, r in zip(post_plan, postbuild)
    )
    pipeline = PipelineResult(
        task_id=task.task_id,
        prebuild_results=tuple(prebuild),
        postbuild_results=tuple(postbuild),
        verdict=PipelineVerdict.POSTBUILD_FAILED if post_failed else PipelineVerdict.SUCCESS,
    )
    if post_failed:
        _comment_on_failure(ctx, pipeline)
    return pipeline


def _comment_on_failure(ctx: InvocationContext, pipeline: PipelineResult) -> None:
    """One summary comment per failed pipeline, listing failing modules."""
    failing = [
        r.plugin_name
        for r in pipeline.prebuild_results + pipeline.postbuild_results
        if r.status in _BLOCKING_BAD
    ]
    body = (
        f"CI {pipeline.verdict.value} for task {pipeline.task_id}; "
        f"failing modules: {', '.join(failing) or 'none'}"
    )
    try:
        ctx.notifier.comment(ctx.task.repo_id, ctx.task.pr_number, body)
    except (CommentFailed, ReportFailed) as exc:
        log.warning("failure comment for task %s failed: %s", pipeline.task_id, exc)
