"""Service configuration: JSON load, validation, defaults, serialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ParseError, ValidationError

DEFAULT_MAX_RUN_QUEUE = 4
DEFAULT_TIMEOUT_SECONDS = 600
DEFAULT_FILE_SIZE_LIMIT = 5 * 1024 * 1024
DEFAULT_HARDCODED_PATTERNS = ("/home/", "/root/")
DEFAULT_TIMESTAMP_SKEW = 86400
DEFAULT_AGING_WINDOW = 30
DEFAULT_LOCK_TIMEOUT = 120
DEFAULT_EXEC_ALLOWLIST = (".sh", ".py", ".pl")


@dataclass(frozen=True)
class RepoConfig:
    repo_id: str
    clone_url: str
    default_branch: str = "main"


@dataclass(frozen=True)
class Thresholds:
    file_size_limit_bytes: int = DEFAULT_FILE_SIZE_LIMIT
    hardcoded_path_patterns: tuple[str, ...] = DEFAULT_HARDCODED_PATTERNS
    timestamp_skew_seconds: int = DEFAULT_TIMESTAMP_SKEW
    executable_extension_allowlist: tuple[str, ...] = DEFAULT_EXEC_ALLOWLIST
    sloc_max_lines: Optional[int] = None


@dataclass(frozen=True)
class StubBuildConfig:
    """Behavior of the shipped platform build stubs."""

    cost_seconds: float = 0.0
    fail_platforms: tuple[str, ...] = ()


@dataclass(frozen=True)
class ServiceConfig:
    repositories: tuple[RepoConfig, ...] = ()
    max_run_queue: int = DEFAULT_MAX_RUN_QUEUE
    max_wait_queue: Optional[int] = None
    webhook_secret: Optional[str] = None
    module_toggles: dict[str, bool] = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)
    aging_window: int = DEFAULT_AGING_WINDOW
    listen_address: str = "127.0.0.1:8345"
    code_host_base_url: str = ""
    state_dir: str = "state"
    plugin_root: str = "plugins"
    default_timeout_seconds: int = DEFAULT_TIMEOUT_SECONDS
    lock_timeout_seconds: int = DEFAULT_LOCK_TIMEOUT
    admin_token: Optional[str] = None
    shutdown_grace_seconds: float = 10.0
    stub_build: StubBuildConfig = field(default_factory=StubBuildConfig)

    def repo(self, repo_id: str) -> Optional[RepoConfig]:
        for r in self.repositories:
            if r.repo_id == repo_id:
                return r
        return None


def _require(cond: bool, fieldpath: str, message: str) -> None:
    if not cond:
        raise ValidationError(fieldpath, message)


def _build(doc: dict[str, Any]) -> ServiceConfig:
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "config document must be a JSON object")

    repos = []
    for i, entry in enumerate(doc.get("repositories", [])):
        for key in ("repo_id", "clone_url"):
            _require(
                isinstance(entry.get(key), str) and entry[key] != "",
                f"repositories[{i}].{key}",
                "required non-empty string",
            )
        repos.append(
            RepoConfig(
                repo_id=entry["repo_id"],
                clone_url=entry["clone_url"],
                default_branch=entry.get("default_branch", "main"),
            )
        )

    th_doc = doc.get("thresholds", {})
    thresholds = Thresholds(
        file_size_limit_bytes=th_doc.get("file_size_limit_bytes", DEFAULT_FILE_SIZE_LIMIT),
        hardcoded_path_patterns=tuple(
            th_doc.get("hardcoded_path_patterns", DEFAULT_HARDCODED_PATTERNS)
        ),
        timestamp_skew_seconds=th_doc.get("timestamp_skew_seconds", DEFAULT_TIMESTAMP_SKEW),
        executable_extension_allowlist=tuple(
            th_doc.get("executable_extension_allowlist", DEFAULT_EXEC_ALLOWLIST)
        ),
        sloc_max_lines=th_doc.get("sloc_max_lines"),
    )

    stub_doc = doc.get("stub_build", {})
    stub = StubBuildConfig(
        cost_seconds=float(stub_doc.get("cost_seconds", 0.0)),
        fail_platforms=tuple(stub_doc.get("fail_platforms", ())),
    )

    cfg = ServiceConfig(
        repositories=tuple(repos),
        max_run_queue=doc.get("max_run_queue", DEFAULT_MAX_RUN_QUEUE),
        max_wait_queue=doc.get("max_wait_queue"),
        webhook_secret=doc.get("webhook_secret"),
        module_toggles=dict(doc.get("module_toggles", {})),
        thresholds=thresholds,
        aging_window=doc.get("aging_window", DEFAULT_AGING_WINDOW),
        listen_address=doc.get("listen_address", "127.0.0.1:8345"),
        code_host_base_url=doc.get("code_host_base_url", ""),
        state_dir=doc.get("state_dir", "state"),
        plugin_root=doc.get("plugin_root", "plugins"),
        default_timeout_seconds=doc.get("default_timeout_seconds", DEFAULT_TIMEOUT_SECONDS),
        lock_timeout_seconds=doc.get("lock_timeout_seconds", DEFAULT_LOCK_TIMEOUT),
        admin_token=doc.get("admin_token"),
        shutdown_grace_seconds=float(doc.get("shutdown_grace_seconds", 10.0)),
        stub_build=stub,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ServiceConfig) -> None:
    _require(isinstance(cfg.max_run_queue, int) and cfg.max_run_queue >= 1,
             "max_run_queue", "must be an integer >= 1")
    if cfg.max_wait_queue is not None:
        _require(isinstance(cfg.max_wait_queue, int) and cfg.max_wait_queue >= 1,
                 "max_wait_queue", "must be an integer >= 1 when set")
    _require(cfg.thresholds.file_size_limit_bytes >= 1,
             "thresholds.file_size_limit_bytes", "must be >= 1")
    _require(cfg.thresholds.timestamp_skew_seconds >= 1,
             "thresholds.timestamp_skew_seconds", "must be >= 1")
    _require(cfg.aging_window >= 1, "aging_window", "must be >= 1")
    _require(cfg.default_timeout_seconds >= 1,
             "default_timeout_seconds", "must be >= 1")
    _require(":" in cfg.listen_address, "listen_address", "expected host:port")
    port = cfg.listen_address.rsplit(":", 1)[1]
    _require(port.isdigit(), "listen_address", "port must be numeric")
    seen = set()
    for i, r in enumerate(cfg.repositories):
        _require(r.repo_id not in seen, f"repositories[{i}].repo_id", "duplicate repo_id")
        seen.add(r.repo_id)
    for name, flag in cfg.module_toggles.items():
        _require(isinstance(flag, bool), f"module_toggles.{name}", "must be a boolean")


def load_config(path: str | Path) -> ServiceConfig:
    """Load and validate a JSON config file, applying defaults."""
    text = Path(path).read_text(encoding="utf-8")
    return loads_config(text)


def loads_config(text: str) -> ServiceConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from exc
    return _build(doc)


def serialize_config(cfg: ServiceConfig) -> str:
    """Serialize to JSON such that loads_config(serialize_config(c)) == c."""
    doc = asdict(cfg)
    doc["repositories"] = [asdict(r) for r in cfg.repositories]
    doc["thresholds"] = asdict(cfg.thresholds)
    doc["stub_build"] = asdict(cfg.stub_build)
    # tuples -> lists for JSON; loads_config converts back
    return json.dumps(doc, indent=2, default=list) + "\n"
