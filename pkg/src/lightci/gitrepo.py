"""Unified source manager: one base clone per repo, cheap per-task worktrees.

The base clone's object store is shared by every task workspace through git
linked worktrees, so N concurrent tasks never duplicate repository objects.
"""

from __future__ import annotations

import fcntl
import os
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .config import RepoConfig
from .errors import CloneFailed, LockTimeout, UnknownCommit

_LOCK_POLL = 0.05


def _git(args: list[str], cwd: Optional[Path] = None) -> str:
    proc = subprocess.run(
        ["git", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise subprocess.CalledProcessError(
            proc.returncode, proc.args, proc.stdout, proc.stderr
        )
    return proc.stdout


@dataclass(frozen=True)
class Workspace:
    task_id: int
    repo_id: str
    path: str
    head_commit: str
    derived_at: float


class SourceManager:
    """Owns state_dir/{clones,workspaces}/ and all git invocations."""

    def __init__(
        self,
        state_dir: str | Path,
        lock_timeout: float = 120.0,
        on_wait: Optional[Callable[[int], None]] = None,
        on_resume: Optional[Callable[[int], None]] = None,
    ):
        self.state_dir = Path(state_dir)
        self.clones_dir = self.state_dir / "clones"
        self.workspaces_dir = self.state_dir / "workspaces"
        self.clones_dir.mkdir(parents=True, exist_ok=True)
        self.workspaces_dir.mkdir(parents=True, exist_ok=True)
        self.lock_timeout = lock_timeout
        self.on_wait = on_wait or (lambda task_id: None)
        self.on_resume = on_resume or (lambda task_id: None)
        self._mu = threading.Lock()
        self._workspaces: dict[int, Workspace] = {}
        self.full_clone_count: dict[str, int] = {}

    def clone_path(self, repo_id: str) -> Path:
        return self.clones_dir / repo_id.replace("/", "__")

    # -- fetch lock ------------------------------------------------------------

    def _acquire_fetch_lock(self, repo_id: str, task_id: Optional[int]):
        """File lock guarding base-clone mutation; flips the task to Wait
        while blocked."""
        lock_file = self.clone_path(repo_id).with_suffix(".lock")
        lock_file.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(lock_file, os.O_CREAT | os.O_RDWR)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
            return fd
        except BlockingIOError:
            pass
        if task_id is not None:
            self.on_wait(task_id)
        try:
            deadline = time.monotonic() + self.lock_timeout
            while True:
                try:
                    fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
                    return fd
                except BlockingIOError:
                    if time.monotonic() >= deadline:
                        os.close(fd)
                        raise LockTimeout(
                            f"fetch lock for {repo_id} held > {self.lock_timeout}s"
                        ) from None
                    time.sleep(_LOCK_POLL)
        finally:
            if task_id is not None:
                self.on_resume(task_id)

    @staticmethod
    def _release_fetch_lock(fd: int) -> None:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)

    # -- base clone --------------------------------------------------------------

    def ensure_base_clone(self, repo: RepoConfig, task_id: Optional[int] = None) -> Path:
        """Idempotent: full clone once, incremental fetch afterwards."""
        path = self.clone_path(repo.repo_id)
        fd = self._acquire_fetch_lock(repo.repo_id, task_id)
        try:
            if not (path / ".git").exists():
                try:
                    _git(["clone", repo.clone_url, str(path)])
                except subprocess.CalledProcessError as exc:
                    shutil.rmtree(path, ignore_errors=True)
                    raise CloneFailed(repo.repo_id, exc.stderr or str(exc)) from exc
                self.full_clone_count[repo.repo_id] = (
                    self.full_clone_count.get(repo.repo_id, 0) + 1
                )
            else:
                try:
                    _git(
                        ["fetch", "origin", "+refs/heads/*:refs/remotes/origin/*"],
                        cwd=path,
                    )
                except subprocess.CalledProcessError as exc:
                    raise CloneFailed(repo.repo_id, exc.stderr or str(exc)) from exc
            return path
        finally:
            self._release_fetch_lock(fd)

    def _commit_present(self, clone: Path, sha: str) -> bool:
        try:
            _git(["cat-file", "-e", f"{sha}^{{commit}}"], cwd=clone)
            return True
        except subprocess.CalledProcessError:
            return False

    # -- workspaces -----------------------------------------------------------------

    def derive_workspace(self, task, repo: RepoConfig) -> Workspace:
        """Check out task.head_commit as a linked worktree (shared objects)."""
        clone = self.ensure_base_clone(repo, task.task_id)
        if not self._commit_present(clone, task.head_commit):
            # ensure_base_clone already fetched; a second fetch covers the
            # race where the commit landed between clone and event delivery
            fd = self._acquire_fetch_lock(repo.repo_id, task.task_id)
            try:
                try:
                    _git(["fetch", "origin"], cwd=clone)
                except subprocess.CalledProcessError:
                    pass
            finally:
                self._release_fetch_lock(fd)
            if not self._commit_present(clone, task.head_commit):
                raise UnknownCommit(f"{task.head_commit} not in {repo.repo_id}")

        ws_path = self.workspaces_dir / str(task.task_id)
        fd = self._acquire_fetch_lock(repo.repo_id, task.task_id)
        try:
            _git(
                ["worktree", "add", "--detach", str(ws_path), task.head_commit],
                cwd=clone,
            )
        except subprocess.CalledProcessError as exc:
            raise CloneFailed(repo.repo_id, exc.stderr or str(exc)) from exc
        finally:
            self._release_fetch_lock(fd)
        if (ws_path / ".gitmodules").exists():
            try:
                _git(["submodule", "update", "--init"], cwd=ws_path)
            except subprocess.CalledProcessError:
                pass
        ws = Workspace(
            task_id=task.task_id,
            repo_id=repo.repo_id,
            path=str(ws_path),
            head_commit=task.head_commit,
            derived_at=time.time(),
        )
        with self._mu:
            self._workspaces[task.task_id] = ws
        return ws

    def release_workspace(self, task_id: int) -> None:
        """Remove a task's worktree; idempotent, base clone untouched."""
        with self._mu:
            ws = self._workspaces.pop(task_id, None)
        path = Path(ws.path) if ws else self.workspaces_dir / str(task_id)
        if ws is not None:
            clone = self.clone_path(ws.repo_id)
            try:
                _git(["worktree", "remove", "--force", str(path)], cwd=clone)
                return
            except subprocess.CalledProcessError:
                pass
        if path.exists():
            shutil.rmtree(path, ignore_errors=True)
        if ws is not None:
            try:
                _git(["worktree", "prune"], cwd=self.clone_path(ws.repo_id))
            except subprocess.CalledProcessError:
                pass

    def live_workspaces(self) -> list[Workspace]:
        with self._mu:
            return list(self._workspaces.values())

    def fsck(self, repo_id: str) -> bool:
        """Repository integrity check on the shared object store."""
        try:
            _git(["fsck", "--no-progress"], cwd=self.clone_path(repo_id))
            return True
        except subprocess.CalledProcessError:
            return False
