"""Shared fixtures: fixture git repos, stub plugins, and a mock code host."""

from __future__ import annotations

import json
import os
import socket
import subprocess
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from lightci.config import RepoConfig, ServiceConfig
from lightci.model import PrTask


def run_git(args, cwd):
    return subprocess.run(
        ["git", *args], cwd=cwd, capture_output=True, text=True, check=True
    ).stdout


class FixtureRepo:
    """A local origin repository with a main branch and PR-style branches."""

    def __init__(self, path: Path):
        self.path = path
        path.mkdir(parents=True, exist_ok=True)
        run_git(["init", "-b", "main"], cwd=path)
        run_git(["config", "user.name", "Fixture Author"], cwd=path)
        run_git(["config", "user.email", "fixture@example.org"], cwd=path)
        # allow fetching the checked-out branch from clones
        run_git(["config", "receive.denyCurrentBranch", "ignore"], cwd=path)
        (path / "README.md").write_text("fixture repo\n", encoding="utf-8")
        run_git(["add", "."], cwd=path)
        self.commit("initial commit\n\nSigned-off-by: Fixture Author <fixture@example.org>")

    def commit(self, message: str, env_extra: dict | None = None) -> str:
        env = dict(os.environ)
        env.update(env_extra or {})
        subprocess.run(
            ["git", "commit", "--allow-empty", "-m", message],
            cwd=self.path, capture_output=True, text=True, check=True, env=env,
        )
        return self.head()

    def head(self, ref: str = "HEAD") -> str:
        return run_git(["rev-parse", ref], cwd=self.path).strip()

    def add_branch_commit(
        self,
        branch: str,
        files: dict[str, bytes | str] | None = None,
        message: str = "change\n\nSigned-off-by: Fixture Author <fixture@example.org>",
        modes: dict[str, int] | None = None,
    ) -> str:
        """Create/extend a branch off main with one commit touching `files`."""
        branches = run_git(["branch", "--list", branch], cwd=self.path)
        if branch.strip() in [b.strip("* ") for b in branches.splitlines()]:
            run_git(["checkout", branch], cwd=self.path)
        else:
            run_git(["checkout", "-b", branch, "main"], cwd=self.path)
        for name, content in (files or {"file.txt": "content\n"}).items():
            target = self.path / name
            target.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(content, str):
                target.write_text(content, encoding="utf-8")
            else:
                target.write_bytes(content)
            if modes and name in modes:
                target.chmod(modes[name])
            run_git(["add", name], cwd=self.path)
        sha = self.commit(message)
        run_git(["checkout", "main"], cwd=self.path)
        return sha

    @property
    def clone_url(self) -> str:
        return str(self.path)


@pytest.fixture
def fixture_repo(tmp_path):
    return FixtureRepo(tmp_path / "origin")


def make_task(task_id=1, repo_id="acme/widget", pr_number=1, generation=1,
              head_commit="0" * 40, **kwargs) -> PrTask:
    return PrTask(
        task_id=task_id,
        repo_id=repo_id,
        pr_number=pr_number,
        generation=generation,
        head_commit=head_commit,
        **kwargs,
    )


@pytest.fixture
def base_config(tmp_path):
    return ServiceConfig(
        state_dir=str(tmp_path / "state"),
        plugin_root=str(tmp_path / "plugins"),
    )


def write_stub_plugin(
    root: Path,
    tier: str,
    name: str,
    body: str,
    group: str = "pre",
    timeout_seconds: int = 30,
    order_index: int = 1000,
) -> Path:
    """Write an external plugin directory with manifest + executable script."""
    plugin_dir = root / tier / name
    plugin_dir.mkdir(parents=True, exist_ok=True)
    script = plugin_dir / "run.sh"
    script.write_text("#!/bin/sh\n" + body + "\n", encoding="utf-8")
    script.chmod(0o755)
    manifest = {
        "name": name,
        "group": group,
        "exec": "run.sh",
        "timeout_seconds": timeout_seconds,
        "order_index": order_index,
    }
    (plugin_dir / "plugin.json").write_text(json.dumps(manifest), encoding="utf-8")
    return plugin_dir


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class MockCodeHost:
    """Records every request; per-path scripted status code sequences."""

    def __init__(self):
        self.requests: list[tuple[str, dict]] = []
        self._scripts: dict[str, list[int]] = {}
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    outer.requests.append((self.path, body))
                    script = outer._scripts.get(self.path)
                    code = script.pop(0) if script else 201
                payload = b"{}"
                self.send_response(code)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def script(self, path: str, codes: list[int]) -> None:
        with self._lock:
            self._scripts[path] = list(codes)

    def count(self, path_prefix: str = "") -> int:
        with self._lock:
            return sum(1 for p, _ in self.requests if p.startswith(path_prefix))

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_code_host():
    host = MockCodeHost()
    yield host
    host.close()
