"""Append-only newline-delimited JSON journal of task lifecycle events."""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Iterator, Optional


class Journal:
    """One record per state transition, flushed per record.

    Record shape: {"ts": float, "task_id": int, "transition": "a->b",
    "reason": str | null}.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, task_id: int, src: str, dst: str, reason: Optional[str] = None) -> None:
        record = {
            "ts": time.time(),
            "task_id": task_id,
            "transition": f"{src}->{dst}",
            "reason": reason,
        }
        line = json.dumps(record, separators=(",", ":"))
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def read_journal(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def transitions_by_task(path: str | Path) -> dict[int, list[tuple[str, str]]]:
    """Group journal edges per task, preserving order, for replay checks."""
    out: dict[int, list[tuple[str, str]]] = {}
    for rec in read_journal(path):
        src, dst = rec["transition"].split("->", 1)
        out.setdefault(rec["task_id"], []).append((src, dst))
    return out
