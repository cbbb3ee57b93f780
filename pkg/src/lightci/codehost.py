"""Outbound code-host API: PR comments and commit statuses.

Failures here are never fatal to a pipeline; callers log and continue.
"""

from __future__ import annotations

import logging
import time
from typing import Optional

import requests

from .errors import CommentFailed, ReportFailed
from .model import CheckStatus

log = logging.getLogger(__name__)

# Up to 3 retries after the initial attempt, exponential backoff on 5xx.
MAX_ATTEMPTS = 4

STATUS_MAP = {
    CheckStatus.PASS: "success",
    CheckStatus.FAIL: "failure",
    CheckStatus.SKIPPED: "success",
    CheckStatus.TIMED_OUT: "error",
    CheckStatus.CRASHED: "error",
}


class CodeHostClient:
    def __init__(self, base_url: str, backoff_base: float = 0.5, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.session = requests.Session()

    def _post(self, path: str, payload: dict) -> None:
        url = f"{self.base_url}{path}"
        last: Optional[str] = None
        for attempt in range(MAX_ATTEMPTS):
            try:
                resp = self.session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last = str(exc)
            else:
                if resp.status_code < 500:
                    if resp.status_code >= 400:
                        raise _RequestRejected(f"{resp.status_code} from {url}")
                    return
                last = f"{resp.status_code} from {url}"
            if attempt < MAX_ATTEMPTS - 1:
                time.sleep(self.backoff_base * (2**attempt))
        raise _RequestRejected(last or "request failed")

    def comment(self, repo_id: str, pr_number: int, body: str) -> None:
        """POST one PR comment; raises CommentFailed after exhausted retries."""
        try:
            self._post(
                f"/repos/{repo_id}/issues/{pr_number}/comments", {"body": body}
            )
        except _RequestRejected as exc:
            raise CommentFailed(str(exc)) from exc

    def report(
        self,
        repo_id: str,
        head_commit: str,
        plugin_name: str,
        state: str,
        detail_url: str = "",
    ) -> None:
        """POST one commit-status update (pending/success/failure/error)."""
        try:
            self._post(
                f"/repos/{repo_id}/statuses/{head_commit}",
                {
                    "state": state,
                    "context": plugin_name,
                    "target_url": detail_url,
                },
            )
        except _RequestRejected as exc:
            raise ReportFailed(str(exc)) from exc


class _RequestRejected(Exception):
    pass


class NullCodeHost:
    """Used when no code_host_base_url is configured."""

    def comment(self, repo_id: str, pr_number: int, body: str) -> None:
        pass

    def report(self, repo_id, head_commit, plugin_name, state, detail_url="") -> None:
        pass
