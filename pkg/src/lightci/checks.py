"""Built-in pre-build checks over a change set, plus the external-tool wrapper.

Every check is a pure function of (ChangeSet, config): no filesystem or clock
access beyond what the ChangeSet already captured, so results are
deterministic and safe to run concurrently.
"""

from __future__ import annotations

import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import Thresholds
from .model import CheckResult, CheckStatus

_SIGNED_OFF_RE = re.compile(r"^Signed-off-by: .+ <.+@.+>$", re.MULTILINE)
_BINARY_SNIFF_BYTES = 8000


@dataclass(frozen=True)
class ChangedFile:
    path: str
    mode: int  # unix mode bits of the file at head
    size: int
    content: bytes = b""
    added_lines: tuple[tuple[int, str], ...] = ()  # (line number at head, text)

    @property
    def is_binary(self) -> bool:
        return b"\x00" in self.content[:_BINARY_SNIFF_BYTES]

    @property
    def executable(self) -> bool:
        return bool(self.mode & 0o111)


@dataclass(frozen=True)
class CommitInfo:
    sha: str
    author_name: str
    author_email: str
    author_timestamp: int
    message: str

    @property
    def subject(self) -> str:
        return self.message.split("\n", 1)[0]


@dataclass(frozen=True)
class ChangeSet:
    """The diff between the target branch and the PR head."""

    changed_files: tuple[ChangedFile, ...] = ()
    commits: tuple[CommitInfo, ...] = ()
    workspace: Optional[str] = None
    now: Optional[int] = None  # wall-clock anchor for timestamp checks


def _result(name: str, passed: bool, detail: str, started: float) -> CheckResult:
    return CheckResult(
        plugin_name=name,
        status=CheckStatus.PASS if passed else CheckStatus.FAIL,
        duration_ms=max(0, int((time.monotonic() - started) * 1000)),
        report_text=detail,
    )


def check_signed_off(changes: ChangeSet) -> CheckResult:
    """Every commit message must carry a Signed-off-by trailer."""
    started = time.monotonic()
    offenders = [c.sha for c in changes.commits if not _SIGNED_OFF_RE.search(c.message)]
    if offenders:
        return _result(
            "signed-off", False,
            "commits missing Signed-off-by:\n" + "\n".join(offenders), started,
        )
    return _result("signed-off", True, "all commits signed off", started)


def check_nobody(changes: ChangeSet) -> CheckResult:
    """Commit subject, author name, and author email must be non-empty."""
    started = time.monotonic()
    offenders = []
    for c in changes.commits:
        if not c.subject.strip() or not c.author_name.strip() or not c.author_email.strip():
            offenders.append(c.sha)
    if offenders:
        return _result(
            "nobody", False,
            "commits with empty message or author:\n" + "\n".join(offenders), started,
        )
    return _result("nobody", True, "all commits attributed", started)


def check_newline(changes: ChangeSet) -> CheckResult:
    """Changed text files must end with a newline; binaries are exempt."""
    started = time.monotonic()
    offenders = [
        f.path
        for f in changes.changed_files
        if f.content and not f.is_binary and not f.content.endswith(b"\n")
    ]
    if offenders:
        return _result(
            "newline", False,
            "files missing trailing newline:\n" + "\n".join(offenders), started,
        )
    return _result("newline", True, "all text files newline-terminated", started)


def check_file_size(changes: ChangeSet, limit: int) -> CheckResult:
    """Changed files strictly larger than the limit fail."""
    started = time.monotonic()
    offenders = [f"{f.path} ({f.size} bytes)" for f in changes.changed_files if f.size > limit]
    if offenders:
        return _result(
            "filesize", False,
            f"files over {limit} bytes:\n" + "\n".join(offenders), started,
        )
    return _result("filesize", True, f"all files <= {limit} bytes", started)


def check_hardcoded_paths(changes: ChangeSet, patterns: Sequence[str]) -> CheckResult:
    """Added lines may not contain any configured path pattern."""
    started = time.monotonic()
    offenders = []
    for f in changes.changed_files:
        if f.is_binary:
            continue
        for lineno, text in f.added_lines:
            if any(p in text for p in patterns):
                offenders.append(f"{f.path}:{lineno}")
    if offenders:
        return _result(
            "hardcoded-path", False,
            "hard-coded paths found at:\n" + "\n".join(offenders), started,
        )
    return _result("hardcoded-path", True, "no hard-coded paths", started)


def check_executable(changes: ChangeSet, allowlist: Sequence[str]) -> CheckResult:
    """Executable files need either a shebang or an allowlisted extension."""
    started = time.monotonic()
    offenders = []
    for f in changes.changed_files:
        if not f.executable:
            continue
        if f.content.startswith(b"#!"):
            continue
        if any(f.path.endswith(ext) for ext in allowlist):
            continue
        offenders.append(f.path)
    if offenders:
        return _result(
            "executable", False,
            "invalid executables:\n" + "\n".join(offenders), started,
        )
    return _result("executable", True, "no invalid executables", started)


def check_timestamp(changes: ChangeSet, skew_seconds: int) -> CheckResult:
    """Commits strictly beyond now + skew are future-dated and fail."""
    started = time.monotonic()
    now = changes.now if changes.now is not None else int(time.time())
    offenders = [
        c.sha for c in changes.commits if c.author_timestamp > now + skew_seconds
    ]
    if offenders:
        return _result(
            "timestamp", False,
            "future-dated commits:\n" + "\n".join(offenders), started,
        )
    return _result("timestamp", True, "all commit timestamps sane", started)


_LEADING_WS_RE = re.compile(r"^[ \t]*")


def check_indent(changes: ChangeSet) -> CheckResult:
    """Heuristic style check: a tab after a space in leading whitespace fails."""
    started = time.monotonic()
    offenders = []
    for f in changes.changed_files:
        if f.is_binary:
            continue
        for lineno, text in f.added_lines:
            leading = _LEADING_WS_RE.match(text).group(0)
            if " \t" in leading:
                offenders.append(f"{f.path}:{lineno}")
    if offenders:
        return _result(
            "indent", False,
            "mixed space-then-tab indentation at:\n" + "\n".join(offenders), started,
        )
    return _result("indent", True, "indentation clean", started)


def check_sloccount(changes: ChangeSet, max_lines: Optional[int]) -> CheckResult:
    """Reports physical source lines across changed text files.

    Informational unless a maximum is configured.
    """
    started = time.monotonic()
    total = sum(
        f.content.count(b"\n") for f in changes.changed_files if not f.is_binary
    )
    if max_lines is not None and total > max_lines:
        return _result(
            "sloccount", False, f"{total} changed lines exceeds max {max_lines}", started
        )
    return _result("sloccount", True, f"{total} physical source lines changed", started)


# -- external-tool wrapper ------------------------------------------------------


@dataclass(frozen=True)
class ToolSpec:
    """A tool-backed check: skip when the binary is absent from PATH."""

    name: str
    binary: str
    argv_template: tuple[str, ...]  # "{files}" expands to changed file paths
    pass_exit_codes: tuple[int, ...] = (0,)
    file_suffixes: tuple[str, ...] = ()  # empty = all changed files
    timeout_seconds: int = 120


def run_tool_wrapper(tool: ToolSpec, changes: ChangeSet) -> CheckResult:
    started = time.monotonic()
    if shutil.which(tool.binary) is None:
        return CheckResult(
            plugin_name=tool.name,
            status=CheckStatus.SKIPPED,
            duration_ms=0,
            report_text=f"tool absent: {tool.binary}",
        )
    files = [
        f.path
        for f in changes.changed_files
        if not tool.file_suffixes or any(f.path.endswith(s) for s in tool.file_suffixes)
    ]
    if not files:
        return CheckResult(
            plugin_name=tool.name,
            status=CheckStatus.SKIPPED,
            duration_ms=0,
            report_text="no matching changed files",
        )
    argv: list[str] = []
    for part in tool.argv_template:
        if part == "{files}":
            argv.extend(files)
        else:
            argv.append(part)
    try:
        proc = subprocess.run(
            argv,
            cwd=changes.workspace,
            capture_output=True,
            text=True,
            timeout=tool.timeout_seconds,
        )
    except subprocess.TimeoutExpired:
        return CheckResult(
            plugin_name=tool.name,
            status=CheckStatus.TIMED_OUT,
            duration_ms=tool.timeout_seconds * 1000,
            report_text=f"{tool.binary} timed out",
        )
    except OSError as exc:
        return CheckResult(
            plugin_name=tool.name,
            status=CheckStatus.CRASHED,
            duration_ms=max(0, int((time.monotonic() - started) * 1000)),
            report_text=f"failed to run {tool.binary}: {exc}",
        )
    passed = proc.returncode in tool.pass_exit_codes
    return CheckResult(
        plugin_name=tool.name,
        status=CheckStatus.PASS if passed else CheckStatus.FAIL,
        duration_ms=max(0, int((time.monotonic() - started) * 1000)),
        report_text=(proc.stdout + proc.stderr),
    )


DEFAULT_TOOLS: dict[str, ToolSpec] = {
    "clang-format": ToolSpec(
        name="clang-format",
        binary="clang-format",
        argv_template=("clang-format", "--dry-run", "--Werror", "{files}"),
        file_suffixes=(".c", ".cc", ".cpp", ".h", ".hpp"),
    ),
    "cppcheck": ToolSpec(
        name="cppcheck",
        binary="cppcheck",
        argv_template=("cppcheck", "--error-exitcode=1", "{files}"),
        file_suffixes=(".c", ".cc", ".cpp", ".h", ".hpp"),
    ),
    "pylint": ToolSpec(
        name="pylint",
        binary="pylint",
        argv_template=("pylint", "--errors-only", "{files}"),
        file_suffixes=(".py",),
    ),
    "doc-tag": ToolSpec(
        name="doc-tag",
        binary="doxygen",
        argv_template=("doxygen", "-v"),
    ),
    "doc-build": ToolSpec(
        name="doc-build",
        binary="doxygen",
        argv_template=("doxygen", "-v"),
    ),
    "scancode": ToolSpec(
        name="scancode",
        binary="scancode",
        argv_template=("scancode", "--license", "{files}"),
    ),
    "flawfinder": ToolSpec(
        name="flawfinder",
        binary="flawfinder",
        argv_template=("flawfinder", "--error-level=1", "{files}"),
        file_suffixes=(".c", ".cc", ".cpp", ".h", ".hpp"),
    ),
}


def run_builtin_check(name: str, changes: ChangeSet, thresholds: Thresholds) -> CheckResult:
    """Dispatch a built-in (native or tool-wrapped) check by plugin name."""
    if name == "signed-off":
        return check_signed_off(changes)
    if name == "nobody":
        return check_nobody(changes)
    if name == "newline":
        return check_newline(changes)
    if name == "filesize":
        return check_file_size(changes, thresholds.file_size_limit_bytes)
    if name == "hardcoded-path":
        return check_hardcoded_paths(changes, thresholds.hardcoded_path_patterns)
    if name == "executable":
        return check_executable(changes, thresholds.executable_extension_allowlist)
    if name == "timestamp":
        return check_timestamp(changes, thresholds.timestamp_skew_seconds)
    if name == "indent":
        tool = DEFAULT_TOOLS["clang-format"]
        if shutil.which(tool.binary) is not None and any(
            f.path.endswith(tool.file_suffixes) for f in changes.changed_files
        ):
            result = run_tool_wrapper(tool, changes)
            return CheckResult(
                plugin_name="indent",
                status=result.status,
                duration_ms=result.duration_ms,
                report_text=result.report_text,
            )
        return check_indent(changes)
    if name == "sloccount":
        return check_sloccount(changes, thresholds.sloc_max_lines)
    if name in DEFAULT_TOOLS:
        return run_tool_wrapper(DEFAULT_TOOLS[name], changes)
    raise KeyError(f"unknown builtin check: {name}")


# -- change-set extraction from a git worktree ------------------------------------


def changeset_from_workspace(workspace: str | Path, target_branch: str) -> ChangeSet:
    """Compute the ChangeSet between origin/<target> and the checked-out head."""
    ws = Path(workspace)

    def git(*args: str) -> str:
        return subprocess.run(
            ["git", *args], cwd=ws, capture_output=True, text=True, check=True
        ).stdout

    target = f"origin/{target_branch}"
    try:
        base = git("merge-base", target, "HEAD").strip()
    except subprocess.CalledProcessError:
        # target branch unknown (fixture repos): fall back to the root commit
        base = git("rev-list", "--max-parents=0", "HEAD").splitlines()[0].strip()

    files: list[ChangedFile] = []
    raw = git("diff", "--raw", "-z", base, "HEAD")
    fields = raw.split("\0")
    i = 0
    while i < len(fields) and fields[i]:
        meta = fields[i].split(" ")
        status = meta[4]
        dst_mode = meta[1]
        path = fields[i + 1]
        i += 2
        if status.startswith(("R", "C")):
            path = fields[i]
            i += 1
        if status.startswith("D"):
            continue
        fpath = ws / path
        content = fpath.read_bytes() if fpath.exists() else b""
        added: list[tuple[int, str]] = []
        diff = git("diff", "-U0", base, "HEAD", "--", path)
        lineno = 0
        for line in diff.splitlines():
            if line.startswith("@@"):
                m = re.search(r"\+(\d+)", line)
                lineno = int(m.group(1)) if m else 0
            elif line.startswith("+") and not line.startswith("+++"):
                added.append((lineno, line[1:]))
                lineno += 1
        files.append(
            ChangedFile(
                path=path,
                mode=int(dst_mode, 8) if dst_mode.isdigit() else 0o100644,
                size=len(content),
                content=content,
                added_lines=tuple(added),
            )
        )

    commits: list[CommitInfo] = []
    log = git("log", "--format=%H%x00%an%x00%ae%x00%at%x00%B%x1e", f"{base}..HEAD")
    for chunk in log.split("\x1e"):
        chunk = chunk.strip("\n")
        if not chunk.strip():
            continue
        sha, an, ae, at, msg = chunk.split("\x00", 4)
        commits.append(
            CommitInfo(
                sha=sha.strip(),
                author_name=an,
                author_email=ae,
                author_timestamp=int(at),
                message=msg,
            )
        )

    return ChangeSet(
        changed_files=tuple(files),
        commits=tuple(commits),
        workspace=str(ws),
    )
