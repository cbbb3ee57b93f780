"""Environment isolator: per-task build roots and the stub platform builds.

Real distro package builds are not reproducible at desk scale; the four
platform modules are stubs that honor the same contract (cost, pass/fail,
artifact in output/) so scheduling, gating, and parallelism stay faithful.
"""

from __future__ import annotations

import json
import shutil
import threading
import time
from pathlib import Path
from typing import Optional

from .config import StubBuildConfig
from .errors import RootCollision
from .model import CheckResult, CheckStatus, PluginDescriptor, PrTask


_manifest_lock = threading.Lock()


class BuildRootManager:
    def __init__(self, state_dir: str | Path):
        self.roots_dir = Path(state_dir) / "buildroots"
        self.roots_dir.mkdir(parents=True, exist_ok=True)

    def root_path(self, task_id: int) -> Path:
        return self.roots_dir / str(task_id)

    def prepare_build_root(self, task: PrTask) -> Path:
        """Create state_dir/buildroots/<task_id>/ with output/ and manifest."""
        if task.workspace_path is None:
            raise ValueError(f"task {task.task_id} has no workspace")
        root = self.root_path(task.task_id)
        if root.exists():
            raise RootCollision(str(root))
        root.mkdir(parents=True)
        # the workspace itself serves as the source tree inside the root via
        # a symlink: no copy, and nothing escapes the per-task directory
        (root / "source").symlink_to(Path(task.workspace_path).resolve())
        (root / "output").mkdir()
        manifest = {
            "task_id": task.task_id,
            "head_sha": task.head_commit,
            "platforms": [],
        }
        (root / "build.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        return root

    def cleanup(self, task_id: int) -> None:
        root = self.root_path(task_id)
        if root.exists():
            shutil.rmtree(root, ignore_errors=True)


def run_stub_build(
    platform: PluginDescriptor,
    root: Path,
    stub: StubBuildConfig,
    cancelled=None,
) -> CheckResult:
    """Simulated platform build: sleep the configured cost, emit an artifact."""
    started = time.monotonic()
    cost = stub.cost_seconds
    deadline = started + cost
    while time.monotonic() < deadline:
        if cancelled is not None and cancelled():
            return CheckResult(
                plugin_name=platform.name,
                status=CheckStatus.CRASHED,
                duration_ms=int((time.monotonic() - started) * 1000),
                report_text="build interrupted",
            )
        time.sleep(min(0.05, max(0.0, deadline - time.monotonic())))
    duration_ms = int((time.monotonic() - started) * 1000)
    if platform.name in stub.fail_platforms:
        return CheckResult(
            plugin_name=platform.name,
            status=CheckStatus.FAIL,
            duration_ms=duration_ms,
            report_text=f"stub build for {platform.name} configured to fail",
        )
    artifact = root / "output" / f"pkg-{platform.name}.txt"
    artifact.write_text(f"dummy package for {platform.name}\n", encoding="utf-8")
    manifest_path = root / "build.json"
    with _manifest_lock:
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            manifest.setdefault("platforms", []).append(platform.name)
            manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        except (OSError, json.JSONDecodeError):
            pass
    return CheckResult(
        plugin_name=platform.name,
        status=CheckStatus.PASS,
        duration_ms=duration_ms,
        report_text=f"built {artifact.name}",
        artifact_paths=(str(artifact),),
    )
