"""Daemon wiring: gateway HTTP server, scheduler, workers, and journal.

Webhook deliveries are acknowledged with 202 and handed to a serialized
dispatch thread, so handler latency never depends on plugin runtimes.
"""

from __future__ import annotations

import json
import logging
import queue
import signal
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from . import gateway, inspector
from .builder import BuildRootManager
from .codehost import CodeHostClient, NullCodeHost
from .config import ServiceConfig, load_config
from .errors import (
    CloneFailed,
    LockTimeout,
    MalformedPayload,
    MissingSignature,
    UnknownCommit,
    WaitQueueFull,
)
from .gitrepo import SourceManager
from .journal import Journal
from .model import (
    CheckResult,
    CheckStatus,
    Phase,
    PipelineResult,
    PipelineVerdict,
    PrTask,
)
from .plugins import AgingTracker, load_store
from .scheduler import Scheduler

log = logging.getLogger(__name__)


class _GatewayServer(ThreadingHTTPServer):
    # webhook bursts arrive in parallel; the default backlog of 5 drops them
    request_queue_size = 128


class Service:
    """Everything behind one listen address, owning one state directory."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.state_dir = Path(config.state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.journal = Journal(self.state_dir / "journal.ndjson")
        self.started_at = time.time()

        self.scheduler = Scheduler(
            config.max_run_queue,
            max_wait_queue=config.max_wait_queue,
            launcher=self._launch_worker,
            observer=self._journal_transition,
            process_killer=inspector.terminate_task_processes,
            resource_releaser=self._release_task_resources,
        )
        self.sources = SourceManager(
            self.state_dir,
            lock_timeout=config.lock_timeout_seconds,
            on_wait=self.scheduler.mark_waiting,
            on_resume=self.scheduler.mark_running,
        )
        self.build_roots = BuildRootManager(self.state_dir)
        self.store = load_store(config.plugin_root, config)
        self.aging = AgingTracker(
            self.store, config.aging_window, self.state_dir / "aging.json"
        )
        self.notifier = (
            CodeHostClient(config.code_host_base_url)
            if config.code_host_base_url
            else NullCodeHost()
        )
        self.dispatcher = gateway.Dispatcher(self.scheduler)
        self._commands: queue.Queue = queue.Queue()
        self._dispatch_thread = threading.Thread(
            target=self._dispatch_loop, name="dispatch", daemon=True
        )
        self._dispatch_thread.start()
        self._httpd: Optional[ThreadingHTTPServer] = None
        self._shutdown = threading.Event()

    # -- journal --------------------------------------------------------------

    def _journal_transition(self, task_id, src, dst, reason) -> None:
        self.journal.append(task_id, str(src), str(dst), reason)

    # -- dispatch -------------------------------------------------------------

    def submit_event(self, event) -> None:
        """Queue an event for the serialized dispatch thread."""
        self._commands.put(event)

    def _dispatch_loop(self) -> None:
        while True:
            event = self._commands.get()
            if event is None:
                return
            try:
                self.dispatcher.dispatch(event)
            except WaitQueueFull as exc:
                log.warning("dropping event for %s#%s: %s",
                            event.repo_id, event.pr_number, exc)
            except Exception:
                log.exception("dispatch failed")

    # -- workers ----------------------------------------------------------------

    def _launch_worker(self, task: PrTask) -> None:
        threading.Thread(
            target=self._execute_task, args=(task,), name=f"task-{task.task_id}",
            daemon=True,
        ).start()

    def _task_cancelled(self, task_id: int) -> bool:
        state = self.scheduler.task(task_id).state
        return state.phase in (Phase.HANGING, Phase.EXIT)

    def _release_task_resources(self, task: PrTask) -> None:
        self.sources.release_workspace(task.task_id)
        self.build_roots.cleanup(task.task_id)

    def _crash_result(self, task: PrTask, message: str) -> PipelineResult:
        return PipelineResult(
            task_id=task.task_id,
            prebuild_results=(
                CheckResult(
                    plugin_name="pipeline",
                    status=CheckStatus.CRASHED,
                    report_text=message,
                ),
            ),
            postbuild_results=(),
            verdict=PipelineVerdict.PREBUILD_FAILED,
        )

    def _execute_task(self, task: PrTask) -> None:
        tid = task.task_id
        try:
            repo = self.config.repo(task.repo_id)
            if repo is None:
                self.scheduler.report_finished(
                    tid, self._crash_result(task, f"unknown repository {task.repo_id}")
                )
                return
            try:
                workspace = self.sources.derive_workspace(task, repo)
            except (CloneFailed, UnknownCommit, LockTimeout) as exc:
                self.scheduler.report_finished(tid, self._crash_result(task, str(exc)))
                return
            task.workspace_path = workspace.path
            if self._task_cancelled(tid):
                self._release_task_resources(task)
                return
            build_root = self.build_roots.prepare_build_root(task)
            report_dir = build_root / "reports"
            report_dir.mkdir(exist_ok=True)
            ctx = inspector.InvocationContext(
                task=task,
                config=self.config,
                workspace=workspace.path,
                build_root=build_root,
                report_dir=str(report_dir),
                notifier=self.notifier,
                register_pgid=lambda pgid: self.scheduler.register_process(tid, pgid),
                unregister_pgid=lambda pgid: self.scheduler.unregister_process(tid, pgid),
                cancelled=lambda: self._task_cancelled(tid),
                parallelism=min(self.config.max_run_queue, 4),
            )
            try:
                result = inspector.run_pipeline(task, self.store, ctx)
            except inspector.TaskKilled:
                return  # the kill path owns resource release
            for check in result.prebuild_results + result.postbuild_results:
                if check.plugin_name in self.store:
                    self.aging.record(check.plugin_name, check)
            delivered = self.scheduler.report_finished(tid, result)
            if delivered:
                self._release_task_resources(task)
        except Exception:
            log.exception("worker for task %s crashed", tid)
            try:
                self.scheduler.report_finished(
                    tid, self._crash_result(task, "internal worker error")
                )
            finally:
                self._release_task_resources(task)

    # -- status ---------------------------------------------------------------------

    def status(self) -> dict:
        snap = self.scheduler.snapshot()
        doc = snap.as_dict()
        doc["uptime_s"] = time.time() - self.started_at
        return doc

    # -- lifecycle ---------------------------------------------------------------------

    def shutdown(self) -> None:
        if self._shutdown.is_set():
            return
        self._shutdown.set()
        self._commands.put(None)
        self.scheduler.shutdown()
        self.scheduler.quiesce(timeout=self.config.shutdown_grace_seconds)
        self.journal.close()

    def make_http_server(self) -> ThreadingHTTPServer:
        host, port = self.config.listen_address.rsplit(":", 1)
        server = _GatewayServer((host, int(port)), _make_handler(self))
        server.daemon_threads = True
        self._httpd = server
        return server

    def serve_forever(self) -> None:
        server = self.make_http_server()
        log.info("listening on %s", self.config.listen_address)

        def _stop(signum, frame):
            threading.Thread(target=server.shutdown, daemon=True).start()

        signal.signal(signal.SIGTERM, _stop)
        signal.signal(signal.SIGINT, _stop)
        try:
            server.serve_forever()
        finally:
            server.server_close()
            self.shutdown()


def _make_handler(service: Service):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _authorized_admin(self) -> bool:
            token = service.config.admin_token
            if token is None:
                return True
            return self.headers.get("Authorization", "") == f"Bearer {token}"

        def do_GET(self):
            if self.path == "/status":
                self._send(200, service.status())
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            if self.path == "/webhook":
                self._handle_webhook(body)
            elif self.path == "/admin/reclaim":
                self._handle_reclaim()
            elif self.path.startswith("/admin/cancel/"):
                self._handle_cancel()
            else:
                self._send(404, {"error": "not found"})

        def _handle_webhook(self, body: bytes) -> None:
            delivery = gateway.Delivery(
                raw_body=body, headers={k: v for k, v in self.headers.items()}
            )
            secret = service.config.webhook_secret
            if secret:
                try:
                    if not gateway.verify_signature(delivery, secret):
                        self._send(401, {"error": "bad signature"})
                        return
                except MissingSignature:
                    self._send(401, {"error": "missing signature"})
                    return
            try:
                parsed = gateway.parse_event(delivery)
            except MalformedPayload as exc:
                self._send(400, {"error": str(exc)})
                return
            if isinstance(parsed, gateway.Ignored):
                self._send(202, {"outcome": "ignored", "reason": parsed.reason})
                return
            cap = service.config.max_wait_queue
            if cap is not None and len(service.status()["wait_queue"]) >= cap:
                self._send(
                    503,
                    {"error": "wait queue full", "retry_after_s": 30},
                )
                return
            service.submit_event(parsed)
            self._send(202, {"outcome": "accepted"})

        def _handle_reclaim(self) -> None:
            if not self._authorized_admin():
                self._send(401, {"error": "unauthorized"})
                return
            victim = service.scheduler.reclaim_oldest()
            self._send(200, {"reclaimed_task_id": victim})

        def _handle_cancel(self) -> None:
            if not self._authorized_admin():
                self._send(401, {"error": "unauthorized"})
                return
            parts = self.path[len("/admin/cancel/"):].rstrip("/").rsplit("/", 1)
            if len(parts) != 2 or not parts[1].isdigit():
                self._send(400, {"error": "expected /admin/cancel/{repo}/{pr}"})
                return
            cancelled = service.scheduler.cancel(parts[0], int(parts[1]))
            self._send(200, {"cancelled_task_ids": cancelled})

    return Handler


def serve(config_path: str | Path) -> None:
    config = load_config(config_path)
    service = Service(config)
    service.serve_forever()
