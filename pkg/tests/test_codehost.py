"""Code-host client retry behaviour against a scripted local HTTP server."""

import pytest

from lightci.codehost import STATUS_MAP, CodeHostClient
from lightci.errors import CommentFailed, ReportFailed
from lightci.model import CheckStatus

COMMENT_PATH = "/repos/acme/widget/issues/7/comments"
STATUS_PATH = "/repos/acme/widget/statuses/" + "a" * 40


def client_for(host):
    return CodeHostClient(host.base_url, backoff_base=0.01)


def test_comment_success_single_request(mock_code_host):
    client_for(mock_code_host).comment("acme/widget", 7, "looks good")
    assert mock_code_host.count(COMMENT_PATH) == 1
    path, body = mock_code_host.requests[0]
    assert body == {"body": "looks good"}


def test_comment_retries_on_5xx_then_succeeds(mock_code_host):
    mock_code_host.script(COMMENT_PATH, [500, 500, 201])
    client_for(mock_code_host).comment("acme/widget", 7, "retry me")
    assert mock_code_host.count(COMMENT_PATH) == 3


def test_comment_gives_up_after_four_attempts(mock_code_host):
    mock_code_host.script(COMMENT_PATH, [500, 500, 500, 500, 500])
    with pytest.raises(CommentFailed):
        client_for(mock_code_host).comment("acme/widget", 7, "doomed")
    assert mock_code_host.count(COMMENT_PATH) == 4


def test_4xx_fails_without_retry(mock_code_host):
    mock_code_host.script(COMMENT_PATH, [403])
    with pytest.raises(CommentFailed):
        client_for(mock_code_host).comment("acme/widget", 7, "nope")
    assert mock_code_host.count(COMMENT_PATH) == 1


def test_report_posts_status_payload(mock_code_host):
    client_for(mock_code_host).report(
        "acme/widget", "a" * 40, "newline", "pending", detail_url="http://x/1"
    )
    path, body = mock_code_host.requests[0]
    assert path == STATUS_PATH
    assert body == {"state": "pending", "context": "newline", "target_url": "http://x/1"}


def test_report_failure_raises_report_failed(mock_code_host):
    mock_code_host.script(STATUS_PATH, [500] * 4)
    with pytest.raises(ReportFailed):
        client_for(mock_code_host).report("acme/widget", "a" * 40, "newline", "pending")


def test_connection_refused_retries_then_fails():
    client = CodeHostClient("http://127.0.0.1:1", backoff_base=0.01)
    with pytest.raises(CommentFailed):
        client.comment("acme/widget", 1, "unreachable")


def test_status_map_covers_every_check_status():
    assert set(STATUS_MAP) == set(CheckStatus)
    assert STATUS_MAP[CheckStatus.PASS] == "success"
    assert STATUS_MAP[CheckStatus.FAIL] == "failure"
    assert STATUS_MAP[CheckStatus.TIMED_OUT] == "error"
    assert STATUS_MAP[CheckStatus.CRASHED] == "error"
