"""Built-in checks: fixture corpus plus targeted edge cases."""

import json
import random
import re
import time
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from lightci.checks import (
    ChangedFile,
    ChangeSet,
    CommitInfo,
    ToolSpec,
    changeset_from_workspace,
    check_file_size,
    check_indent,
    check_newline,
    check_signed_off,
    run_builtin_check,
    run_tool_wrapper,
)
from lightci.config import Thresholds
from lightci.model import CheckStatus

CORPUS = Path(__file__).parent / "fixtures" / "checks"


def load_case(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def changeset_from_case(case: dict) -> ChangeSet:
    files = []
    for entry in case.get("files", []):
        content = entry["content"].encode("utf-8")
        added = tuple((n, t) for n, t in entry.get("added_lines", []))
        files.append(
            ChangedFile(
                path=entry["path"],
                mode=int(entry.get("mode", "100644"), 8),
                size=len(content),
                content=content,
                added_lines=added,
            )
        )
    commits = tuple(CommitInfo(**c) for c in case.get("commits", []))
    return ChangeSet(changed_files=tuple(files), commits=commits, now=case.get("now"))


def corpus_cases():
    for case_path in sorted(CORPUS.glob("*/*.json")):
        yield pytest.param(case_path, id=f"{case_path.parent.name}-{case_path.stem}")


ALL_RULES = {
    "signed-off", "nobody", "newline", "filesize", "hardcoded-path",
    "executable", "timestamp", "indent", "sloccount", "tool-wrapper",
}


def test_corpus_has_pass_and_fail_per_rule():
    rules = {p.name for p in CORPUS.iterdir() if p.is_dir()}
    assert rules == ALL_RULES
    for rule in rules:
        assert (CORPUS / rule / "pass.json").is_file()
        assert (CORPUS / rule / "fail.json").is_file()


@pytest.mark.parametrize("case_path", list(corpus_cases()))
def test_corpus_case(case_path, tmp_path):
    case = load_case(case_path)
    changes = changeset_from_case(case)
    if case["check"] == "tool-wrapper":
        tool_bin = tmp_path / "mock-lint"
        tool_bin.write_text(f"#!/bin/sh\nexit {case['tool_exit']}\n")
        tool_bin.chmod(0o755)
        spec = ToolSpec(name="mock-lint", binary=str(tool_bin), argv_template=(str(tool_bin),))
        result = run_tool_wrapper(spec, changes)
    else:
        thresholds = Thresholds(**case.get("thresholds", {}))
        result = run_builtin_check(case["check"], changes, thresholds)
    expected = CheckStatus.PASS if case["expect"] == "pass" else CheckStatus.FAIL
    assert result.status is expected, result.report_text


def make_commit(sha, message):
    return CommitInfo(
        sha=sha, author_name="A Dev", author_email="a@d.io",
        author_timestamp=int(time.time()), message=message,
    )


def test_signed_off_lists_exactly_the_offenders():
    signed = "change\n\nSigned-off-by: A Dev <a@d.io>"
    commits = tuple(
        make_commit(f"{i:040x}", signed if i not in (2, 4) else "change, no trailer")
        for i in range(1, 6)
    )
    result = check_signed_off(ChangeSet(commits=commits))
    assert result.status is CheckStatus.FAIL
    listed = set(re.findall(r"[0-9a-f]{40}", result.report_text))
    assert listed == {f"{2:040x}", f"{4:040x}"}


def test_newline_skips_binary_files():
    png_like = b"\x89PNG\x00\x00data-without-newline"
    changes = ChangeSet(changed_files=(
        ChangedFile(path="img.png", mode=0o100644, size=len(png_like), content=png_like),
    ))
    assert check_newline(changes).status is CheckStatus.PASS


def test_file_size_verdict_matches_max_oracle():
    rng = random.Random(4)
    limit = 500
    for _ in range(20):
        sizes = [rng.randrange(1, 1000) for _ in range(3)]
        changes = ChangeSet(changed_files=tuple(
            ChangedFile(path=f"f{i}", mode=0o100644, size=s) for i, s in enumerate(sizes)
        ))
        result = check_file_size(changes, limit)
        expected = CheckStatus.FAIL if max(sizes) > limit else CheckStatus.PASS
        assert result.status is expected


def test_hardcoded_path_ignores_removed_lines():
    # pattern appears in content (context) but not in any added line
    content = b'# was open("/home/me/x")\nopen("data/x")\n'
    changes = ChangeSet(changed_files=(
        ChangedFile(
            path="a.py", mode=0o100644, size=len(content), content=content,
            added_lines=((2, 'open("data/x")'),),
        ),
    ))
    result = run_builtin_check("hardcoded-path", changes, Thresholds())
    assert result.status is CheckStatus.PASS


def test_timestamp_boundary_is_strict():
    now = 1_000_000
    skew = 86_400
    bound_commit = CommitInfo(
        sha="a" * 40, author_name="A", author_email="a@d.io",
        author_timestamp=now + skew, message="m",
    )
    at_bound = ChangeSet(commits=(bound_commit,), now=now)
    assert run_builtin_check("timestamp", at_bound, Thresholds()).status is CheckStatus.PASS


@given(st.lists(st.text(alphabet=" \t", max_size=6), min_size=1, max_size=20))
def test_indent_matches_regex_oracle(indents):
    lines = tuple((i + 1, ws + "x") for i, ws in enumerate(indents))
    content = ("\n".join(t for _, t in lines) + "\n").encode()
    changes = ChangeSet(changed_files=(
        ChangedFile(path="a.txt", mode=0o100644, size=len(content),
                    content=content, added_lines=lines),
    ))
    should_fail = any(" \t" in ws for ws in indents)
    expected = CheckStatus.FAIL if should_fail else CheckStatus.PASS
    assert check_indent(changes).status is expected


def test_checks_ignore_unchanged_files():
    # violation exists in the repo but not in the change set
    changes = ChangeSet(changed_files=(), commits=(make_commit("b" * 40, "ok\n\nSigned-off-by: A <a@d.io>"),))
    for name in ("newline", "filesize", "hardcoded-path", "executable", "indent"):
        assert run_builtin_check(name, changes, Thresholds()).status is CheckStatus.PASS


def test_tool_wrapper_skips_when_binary_absent():
    spec = ToolSpec(name="ghost", binary="definitely-not-on-path-xyzzy", argv_template=("x",))
    changes = ChangeSet(changed_files=(
        ChangedFile(path="a.c", mode=0o100644, size=1, content=b"x"),
    ))
    result = run_tool_wrapper(spec, changes)
    assert result.status is CheckStatus.SKIPPED
    assert result.duration_ms == 0


def test_tool_wrapper_skips_without_matching_files(tmp_path):
    tool = tmp_path / "t"
    tool.write_text("#!/bin/sh\nexit 0\n")
    tool.chmod(0o755)
    spec = ToolSpec(name="t", binary=str(tool), argv_template=(str(tool),),
                    file_suffixes=(".c",))
    changes = ChangeSet(changed_files=(
        ChangedFile(path="a.py", mode=0o100644, size=1, content=b"x"),
    ))
    assert run_tool_wrapper(spec, changes).status is CheckStatus.SKIPPED


def test_changeset_from_workspace_extracts_diff(fixture_repo, tmp_path):
    fixture_repo.add_branch_commit(
        "pr-1",
        files={"src/new.txt": "added line\n"},
        message="add file\n\nSigned-off-by: Fixture Author <fixture@example.org>",
    )
    clone = tmp_path / "clone"
    import subprocess
    subprocess.run(["git", "clone", fixture_repo.clone_url, str(clone)],
                   capture_output=True, check=True)
    subprocess.run(["git", "checkout", "pr-1"], cwd=clone, capture_output=True, check=True)
    changes = changeset_from_workspace(clone, "main")
    assert [f.path for f in changes.changed_files] == ["src/new.txt"]
    assert changes.changed_files[0].added_lines == ((1, "added line"),)
    assert len(changes.commits) == 1
    assert check_signed_off(changes).status is CheckStatus.PASS
