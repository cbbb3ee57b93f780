"""Process-group supervision helpers.

Every external plugin runs in its own session/process group so the whole
tree (children, grandchildren) can be reaped in one signal sweep.
"""

from __future__ import annotations

import os
import signal
import subprocess
import time
from typing import Mapping, Optional

GRACE_SECONDS = 5.0
_POLL_INTERVAL = 0.05


def spawn_group(
    argv: list[str],
    cwd: str,
    env: Mapping[str, str],
    stdout,
    stderr,
) -> subprocess.Popen:
    """Start a child in a fresh session with stdin closed."""
    return subprocess.Popen(
        argv,
        cwd=cwd,
        env=dict(env),
        stdin=subprocess.DEVNULL,
        stdout=stdout,
        stderr=stderr,
        start_new_session=True,
    )


def group_alive(pgid: int) -> bool:
    try:
        os.killpg(pgid, 0)
        return True
    except ProcessLookupError:
        return False
    except PermissionError:
        return True


def _signal_group(pgid: int, sig: int) -> None:
    try:
        os.killpg(pgid, sig)
    except ProcessLookupError:
        pass


def terminate_group(pgid: int, grace: float = GRACE_SECONDS) -> None:
    """SIGTERM the group, wait up to `grace`, then SIGKILL stragglers."""
    _signal_group(pgid, signal.SIGTERM)
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline:
        if not group_alive(pgid):
            return
        time.sleep(_POLL_INTERVAL)
    _signal_group(pgid, signal.SIGKILL)
    # Zombies still count as alive until reaped by their parent; give the
    # kill a moment to land but do not block forever on unreaped zombies.
    deadline = time.monotonic() + 1.0
    while time.monotonic() < deadline and group_alive(pgid):
        time.sleep(_POLL_INTERVAL)


def terminate_groups(pgids: set[int], grace: float = GRACE_SECONDS) -> None:
    """Terminate several groups with one shared grace period."""
    for pgid in pgids:
        _signal_group(pgid, signal.SIGTERM)
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline:
        if not any(group_alive(p) for p in pgids):
            return
        time.sleep(_POLL_INTERVAL)
    for pgid in pgids:
        _signal_group(pgid, signal.SIGKILL)


def pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
        return True
    except ProcessLookupError:
        return False
    except PermissionError:
        return True


def wait_reaped(proc: subprocess.Popen, timeout: Optional[float] = None) -> None:
    try:
        proc.wait(timeout=timeout)
    except subprocess.TimeoutExpired:
        pass
