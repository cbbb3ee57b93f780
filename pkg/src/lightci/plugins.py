"""Plugin store and orchestration policy.

Built-in check modules are registered first with their default ordering;
external plugins are discovered from plugins/{base,good,staging}/<name>/
manifests.  Iteration order is always base, then good, then staging, with
ascending order_index inside each tier.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import ServiceConfig
from .errors import DuplicateName, ManifestError, NotStaging, UnknownPlugin, ValidationError
from .model import CheckResult, CheckStatus, Group, PluginDescriptor, PluginKind, Tier

# Built-in modules in their canonical order.  1-16 are pre-build checks,
# 17-20 are the stub platform build modules.
BUILTIN_MODULES: tuple[tuple[int, str, Group], ...] = (
    (1, "clang-format", Group.PRE_BUILD),
    (2, "cppcheck", Group.PRE_BUILD),
    (3, "pylint", Group.PRE_BUILD),
    (4, "indent", Group.PRE_BUILD),
    (5, "doc-tag", Group.PRE_BUILD),
    (6, "doc-build", Group.PRE_BUILD),
    (7, "scancode", Group.PRE_BUILD),
    (8, "filesize", Group.PRE_BUILD),
    (9, "newline", Group.PRE_BUILD),
    (10, "nobody", Group.PRE_BUILD),
    (11, "signed-off", Group.PRE_BUILD),
    (12, "hardcoded-path", Group.PRE_BUILD),
    (13, "executable", Group.PRE_BUILD),
    (14, "timestamp", Group.PRE_BUILD),
    (15, "sloccount", Group.PRE_BUILD),
    (16, "flawfinder", Group.PRE_BUILD),
    (17, "tizen", Group.POST_BUILD),
    (18, "android", Group.POST_BUILD),
    (19, "ubuntu", Group.POST_BUILD),
    (20, "yocto", Group.POST_BUILD),
)

BUILD_PLATFORMS = ("tizen", "android", "ubuntu", "yocto")

_TIER_RANK = {Tier.BASE: 0, Tier.GOOD: 1, Tier.STAGING: 2}


@dataclass(frozen=True)
class PluginStore:
    descriptors: tuple[PluginDescriptor, ...]

    def __iter__(self):
        return iter(self.descriptors)

    def get(self, name: str) -> PluginDescriptor:
        for d in self.descriptors:
            if d.name == name:
                return d
        raise UnknownPlugin(name)

    def __contains__(self, name: str) -> bool:
        return any(d.name == name for d in self.descriptors)


def builtin_descriptors(default_timeout: int = 600) -> list[PluginDescriptor]:
    return [
        PluginDescriptor(
            name=name,
            tier=Tier.BASE,
            group=group,
            kind=PluginKind.BUILTIN,
            timeout_seconds=default_timeout,
            order_index=index,
        )
        for index, name, group in BUILTIN_MODULES
    ]


def _load_manifest(manifest_path: Path, tier: Tier, default_timeout: int) -> PluginDescriptor:
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{manifest_path}: {exc}") from exc
    for key in ("name", "group", "exec"):
        if key not in doc:
            raise ManifestError(f"{manifest_path}: missing field {key!r}")
    if doc["group"] in ("pre", "prebuild", "pre-build"):
        group = Group.PRE_BUILD
    elif doc["group"] in ("post", "postbuild", "post-build"):
        group = Group.POST_BUILD
    else:
        raise ManifestError(f"{manifest_path}: bad group {doc['group']!r}")
    exec_path = (manifest_path.parent / doc["exec"]).resolve()
    if not exec_path.is_file() or not os.access(exec_path, os.X_OK):
        raise ManifestError(f"{manifest_path}: exec {exec_path} missing or not executable")
    return PluginDescriptor(
        name=doc["name"],
        tier=tier,
        group=group,
        kind=PluginKind.EXTERNAL,
        exec_path=str(exec_path),
        timeout_seconds=int(doc.get("timeout_seconds", default_timeout)),
        order_index=int(doc.get("order_index", 1000)),
    )


def load_store(root: str | Path, config: ServiceConfig) -> PluginStore:
    """Register built-ins, discover external plugins, apply toggles."""
    descriptors = builtin_descriptors(config.default_timeout_seconds)
    seen = {d.name for d in descriptors}
    root = Path(root)
    for tier in (Tier.BASE, Tier.GOOD, Tier.STAGING):
        tier_dir = root / tier.value
        if not tier_dir.is_dir():
            continue
        for entry in sorted(tier_dir.iterdir()):
            manifest = entry / "plugin.json"
            if not manifest.is_file():
                continue
            desc = _load_manifest(manifest, tier, config.default_timeout_seconds)
            if desc.name in seen:
                raise DuplicateName(desc.name)
            seen.add(desc.name)
            descriptors.append(desc)

    for name in config.module_toggles:
        if name not in seen:
            raise ValidationError(f"module_toggles.{name}", "unknown plugin")

    toggled = []
    for d in descriptors:
        enabled = config.module_toggles.get(d.name, d.enabled)
        toggled.append(
            d if enabled == d.enabled else PluginDescriptor(
                name=d.name, tier=d.tier, group=d.group, kind=d.kind,
                timeout_seconds=d.timeout_seconds, exec_path=d.exec_path,
                enabled=enabled, order_index=d.order_index,
            )
        )

    toggled.sort(key=lambda d: (_TIER_RANK[d.tier], d.order_index, d.name))
    pairs: set[tuple[Tier, Group, int]] = set()
    for d in toggled:
        key = (d.tier, d.group, d.order_index)
        if key in pairs:
            raise ManifestError(
                f"duplicate (tier={d.tier.value}, order_index={d.order_index}) in "
                f"group {d.group.value}"
            )
        pairs.add(key)
    return PluginStore(descriptors=tuple(toggled))


def execution_plan(store: PluginStore, group: Group) -> list[PluginDescriptor]:
    """Enabled descriptors of the group, tier-major then order_index order."""
    return [d for d in store if d.enabled and d.group is group]


# -- aging test ------------------------------------------------------------------


@dataclass
class AgingRecord:
    plugin_name: str
    consecutive_clean_runs: int = 0
    last_failure_at: Optional[float] = None


class AgingTracker:
    """Counts consecutive clean runs per plugin; persisted across restarts."""

    def __init__(self, store: PluginStore, aging_window: int, state_path: Optional[str | Path] = None):
        self.store = store
        self.aging_window = aging_window
        self.state_path = Path(state_path) if state_path else None
        self._lock = threading.Lock()
        self._records: dict[str, AgingRecord] = {}
        if self.state_path and self.state_path.exists():
            doc = json.loads(self.state_path.read_text(encoding="utf-8"))
            for name, rec in doc.items():
                self._records[name] = AgingRecord(
                    plugin_name=name,
                    consecutive_clean_runs=rec["consecutive_clean_runs"],
                    last_failure_at=rec.get("last_failure_at"),
                )

    def _persist_locked(self) -> None:
        if not self.state_path:
            return
        doc = {
            name: {
                "consecutive_clean_runs": rec.consecutive_clean_runs,
                "last_failure_at": rec.last_failure_at,
            }
            for name, rec in self._records.items()
        }
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")

    def record(self, plugin_name: str, result: CheckResult) -> AgingRecord:
        """Pass extends the clean streak; Fail/Crashed/TimedOut reset it.

        Skipped results leave the streak untouched.
        """
        if plugin_name not in self.store:
            raise UnknownPlugin(plugin_name)
        with self._lock:
            rec = self._records.setdefault(plugin_name, AgingRecord(plugin_name))
            if result.status is CheckStatus.PASS:
                rec.consecutive_clean_runs += 1
            elif result.status is not CheckStatus.SKIPPED:
                rec.consecutive_clean_runs = 0
                rec.last_failure_at = time.time()
            self._persist_locked()
            return AgingRecord(
                plugin_name=rec.plugin_name,
                consecutive_clean_runs=rec.consecutive_clean_runs,
                last_failure_at=rec.last_failure_at,
            )

    def promotion_eligible(self, plugin_name: str) -> bool:
        """Eligibility only; the move to the good tier is a manual action."""
        descriptor = self.store.get(plugin_name)
        if descriptor.tier is not Tier.STAGING:
            raise NotStaging(plugin_name)
        with self._lock:
            rec = self._records.get(plugin_name)
            return rec is not None and rec.consecutive_clean_runs >= self.aging_window
