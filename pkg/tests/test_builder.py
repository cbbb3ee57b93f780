"""Build-root isolation and stub platform builds."""

import json
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from conftest import make_task
from lightci.builder import BuildRootManager, run_stub_build
from lightci.config import StubBuildConfig
from lightci.errors import RootCollision
from lightci.model import CheckStatus, Group, PluginDescriptor, PluginKind, Tier
from lightci.plugins import BUILD_PLATFORMS, builtin_descriptors


def platform(name="yocto"):
    return next(d for d in builtin_descriptors() if d.name == name)


def prepared_root(manager, tmp_path, task_id=1):
    ws = tmp_path / f"ws-{task_id}"
    ws.mkdir(exist_ok=True)
    task = make_task(task_id=task_id, workspace_path=str(ws))
    return manager.prepare_build_root(task)


def test_roots_are_disjoint_per_task(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    roots = [prepared_root(manager, tmp_path, task_id=i) for i in range(1, 4)]
    assert len({str(r) for r in roots}) == 3
    for r in roots:
        assert (r / "output").is_dir()
        assert (r / "source").is_symlink()
        assert json.loads((r / "build.json").read_text())["platforms"] == []


def test_second_prepare_for_same_task_collides(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    prepared_root(manager, tmp_path, task_id=5)
    with pytest.raises(RootCollision):
        prepared_root(manager, tmp_path, task_id=5)


def test_cleanup_removes_root_and_is_idempotent(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    root = prepared_root(manager, tmp_path, task_id=9)
    manager.cleanup(9)
    assert not root.exists()
    manager.cleanup(9)


def test_prepare_requires_workspace(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    with pytest.raises(ValueError):
        manager.prepare_build_root(make_task(task_id=2, workspace_path=None))


def test_stub_build_emits_artifact_and_manifest_entry(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    root = prepared_root(manager, tmp_path)
    result = run_stub_build(platform("yocto"), root, StubBuildConfig(cost_seconds=0))
    assert result.status is CheckStatus.PASS
    artifact = root / "output" / "pkg-yocto.txt"
    assert artifact.is_file()
    assert result.artifact_paths == (str(artifact),)
    manifest = json.loads((root / "build.json").read_text())
    assert manifest["platforms"] == ["yocto"]


def test_stub_build_configured_failure(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    root = prepared_root(manager, tmp_path)
    stub = StubBuildConfig(cost_seconds=0, fail_platforms=("android",))
    assert run_stub_build(platform("android"), root, stub).status is CheckStatus.FAIL
    assert run_stub_build(platform("tizen"), root, stub).status is CheckStatus.PASS
    assert not (root / "output" / "pkg-android.txt").exists()


def test_stub_build_cancellation_interrupts_sleep(tmp_path):
    manager = BuildRootManager(tmp_path / "state")
    root = prepared_root(manager, tmp_path)
    started = time.monotonic()
    result = run_stub_build(
        platform(), root, StubBuildConfig(cost_seconds=30), cancelled=lambda: True
    )
    assert result.status is CheckStatus.CRASHED
    assert time.monotonic() - started < 5


def test_parallel_stub_builds_take_about_one_cost(tmp_path):
    """4 builds of cost c with 4 workers finish in ~c, not 4c."""
    manager = BuildRootManager(tmp_path / "state")
    root = prepared_root(manager, tmp_path)
    stub = StubBuildConfig(cost_seconds=1.0)
    platforms = [platform(name) for name in BUILD_PLATFORMS]
    started = time.monotonic()
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda p: run_stub_build(p, root, stub), platforms))
    elapsed = time.monotonic() - started
    assert all(r.status is CheckStatus.PASS for r in results)
    assert elapsed < 2.0  # serial would be ~4 s
    manifest = json.loads((root / "build.json").read_text())
    assert sorted(manifest["platforms"]) == sorted(BUILD_PLATFORMS)
