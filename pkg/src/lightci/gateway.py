"""Webhook boundary: authenticate, parse, dedup, and dispatch deliveries.

Dispatch only creates and submits tasks; pipelines run on worker threads, so
the HTTP handler answers long before any plugin executes.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .errors import MalformedPayload, MissingSignature
from .model import Action, PrEvent, PrTask
from .scheduler import Scheduler

SIGNATURE_HEADER = "X-Signature-256"
EVENT_KIND_HEADER = "X-Event-Kind"
DELIVERY_ID_HEADER = "X-Delivery-Id"
DEDUP_WINDOW = 1024

_ACTION_MAP = {
    "opened": Action.OPENED,
    "synchronize": Action.SYNCHRONIZED,
    "synchronized": Action.SYNCHRONIZED,
    "closed": Action.CLOSED,
}


@dataclass(frozen=True)
class Delivery:
    raw_body: bytes
    headers: dict[str, str]

    def header(self, name: str) -> Optional[str]:
        for k, v in self.headers.items():
            if k.lower() == name.lower():
                return v
        return None


class Ignored:
    """Sentinel for deliveries that are valid but not actionable."""

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self):
        return f"Ignored({self.reason!r})"


def verify_signature(delivery: Delivery, secret: str) -> bool:
    """HMAC-SHA256 check of the raw body; constant-time comparison."""
    if not secret:
        raise ValueError("secret must be non-empty")
    header = delivery.header(SIGNATURE_HEADER)
    if header is None:
        raise MissingSignature(SIGNATURE_HEADER)
    expected = "sha256=" + hmac.new(
        secret.encode("utf-8"), delivery.raw_body, hashlib.sha256
    ).hexdigest()
    return hmac.compare_digest(header, expected)


def parse_event(delivery: Delivery) -> Union[PrEvent, Ignored]:
    """Map a pull_request delivery onto PrEvent; everything else is Ignored."""
    kind = delivery.header(EVENT_KIND_HEADER) or ""
    if kind not in ("pull_request", ""):
        return Ignored(f"event kind {kind!r}")
    try:
        doc = json.loads(delivery.raw_body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedPayload("<body>") from exc
    if not isinstance(doc, dict):
        raise MalformedPayload("<body>")
    action_name = doc.get("action")
    if action_name not in _ACTION_MAP:
        return Ignored(f"action {action_name!r}")

    def pick(path: str):
        node = doc
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                raise MalformedPayload(path)
            node = node[part]
        return node

    try:
        event = PrEvent(
            repo_id=pick("repository.full_name"),
            pr_number=int(pick("number")),
            action=_ACTION_MAP[action_name],
            head_commit=pick("pull_request.head.sha"),
            source_branch=pick("pull_request.head.ref"),
            target_branch=pick("pull_request.base.ref"),
            clone_url=pick("repository.clone_url"),
            delivery_id=delivery.header(DELIVERY_ID_HEADER) or "",
            received_at=time.monotonic_ns(),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedPayload(str(exc)) from exc
    return event


class OutcomeKind(str, Enum):
    ENQUEUED = "enqueued"
    SUPERSEDED = "superseded"
    CANCELLED = "cancelled"
    IGNORED = "ignored"


@dataclass(frozen=True)
class DispatchOutcome:
    kind: OutcomeKind
    new_task_id: Optional[int] = None
    killed_task_ids: tuple[int, ...] = ()
    cancelled_task_ids: tuple[int, ...] = ()
    reason: str = ""


class Dispatcher:
    """Turns PrEvents into scheduler commands, with delivery-id dedup."""

    def __init__(self, scheduler: Scheduler, dedup_window: int = DEDUP_WINDOW):
        self.scheduler = scheduler
        self.dedup_window = dedup_window
        self._seen: OrderedDict[str, None] = OrderedDict()
        self._lock = threading.Lock()

    def _duplicate(self, delivery_id: str) -> bool:
        if not delivery_id:
            return False
        with self._lock:
            if delivery_id in self._seen:
                return True
            self._seen[delivery_id] = None
            while len(self._seen) > self.dedup_window:
                self._seen.popitem(last=False)
            return False

    def dispatch(self, event: PrEvent) -> DispatchOutcome:
        if self._duplicate(event.delivery_id):
            return DispatchOutcome(
                kind=OutcomeKind.IGNORED, reason=f"duplicate delivery {event.delivery_id}"
            )
        if event.action is Action.CLOSED:
            cancelled = self.scheduler.cancel(event.repo_id, event.pr_number)
            return DispatchOutcome(
                kind=OutcomeKind.CANCELLED, cancelled_task_ids=tuple(cancelled)
            )

        task = PrTask(
            task_id=self.scheduler.allocate_task_id(),
            repo_id=event.repo_id,
            pr_number=event.pr_number,
            generation=self.scheduler.next_generation(event.repo_id, event.pr_number),
            head_commit=event.head_commit,
            source_branch=event.source_branch,
            target_branch=event.target_branch,
            clone_url=event.clone_url,
        )
        killed = self.scheduler.submit(task)
        if killed:
            return DispatchOutcome(
                kind=OutcomeKind.SUPERSEDED,
                new_task_id=task.task_id,
                killed_task_ids=tuple(killed),
            )
        return DispatchOutcome(kind=OutcomeKind.ENQUEUED, new_task_id=task.task_id)
