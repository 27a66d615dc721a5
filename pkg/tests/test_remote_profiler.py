import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from ragsched.profiler import (
    EstimatorUnavailable,
    FeedbackEntry,
    FeedbackLedger,
    RemoteEstimator,
    UnparseableAnswer,
)
from ragsched.types import DatasetMeta, IntRange, QueryRecord

META = DatasetMeta(description="quarterly financial reports", chunk_size=1024)

ANSWER = "Complexity: High\nJoint Reasoning needed: Yes\nPieces: 4\nSummary range: 50-120"


def tokenized(text, logprob):
    return [{"token": piece, "logprob": logprob} for piece in text.splitlines(keepends=True)]


class _Stub(BaseHTTPRequestHandler):
    response_builder = None
    requests_seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        type(self).requests_seen.append({"path": self.path, "body": body, "headers": dict(self.headers)})
        status, payload = type(self).response_builder(body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Stub.requests_seen = []
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=2)


def completion(content, token_logprobs=None):
    choice = {"index": 0, "message": {"role": "assistant", "content": content}}
    if token_logprobs is not None:
        choice["logprobs"] = {"content": token_logprobs}
    return {"id": "c1", "object": "chat.completion", "choices": [choice]}


def make_query():
    return QueryRecord(id="q1", text="Which quarter had the highest cost?", query_token_len=9)


def endpoint(server):
    return f"http://127.0.0.1:{server.server_address[1]}/v1"


def test_remote_estimator_parses_answer_and_logprob_confidence(stub_server):
    # line tokens carry distinct logprobs: confidence is exp(mean) per line
    tokens = (
        [{"token": "Complexity: High\n", "logprob": -0.05}]
        + [{"token": "Joint Reasoning needed: Yes\n", "logprob": -0.2}]
        + [{"token": "Pieces:", "logprob": -0.4}, {"token": " 4\n", "logprob": -0.6}]
        + [{"token": "Summary range: 50-120", "logprob": -0.01}]
    )
    _Stub.response_builder = lambda body: (200, completion(ANSWER, tokens))
    est = RemoteEstimator(endpoint(stub_server), model="m")
    out = est.profile_query(make_query(), META)
    assert out.profile.complexity_high and out.profile.needs_joint_reasoning
    assert out.profile.pieces_required == 4
    assert out.profile.summary_len_range == IntRange(50, 120)
    assert out.per_field_confidence["complexity"] == pytest.approx(math.exp(-0.05))
    assert out.per_field_confidence["joint_reasoning"] == pytest.approx(math.exp(-0.2))
    assert out.per_field_confidence["pieces"] == pytest.approx(math.exp(-0.5))
    assert out.per_field_confidence["summary_range"] == pytest.approx(math.exp(-0.01))
    assert out.profile.confidence == pytest.approx(math.exp(-0.5))


def test_remote_estimator_defaults_to_passthrough_without_logprobs(stub_server):
    _Stub.response_builder = lambda body: (200, completion(ANSWER))
    est = RemoteEstimator(endpoint(stub_server))
    out = est.profile_query(make_query(), META)
    assert out.profile.confidence == 1.0
    assert all(v == 1.0 for v in out.per_field_confidence.values())


def test_remote_estimator_clamps_out_of_domain_pieces(stub_server):
    answer = "Complexity: Low\nJoint Reasoning needed: No\nPieces: 15\nSummary range: 50-120"
    _Stub.response_builder = lambda body: (200, completion(answer))
    out = RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META)
    assert out.profile.pieces_required == 10
    assert "pieces" in out.clamped_fields


def test_remote_estimator_raises_on_unparseable_answer(stub_server):
    _Stub.response_builder = lambda body: (200, completion("I cannot answer that."))
    with pytest.raises(UnparseableAnswer):
        RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META)


def test_remote_estimator_unavailable_on_http_error(stub_server):
    _Stub.response_builder = lambda body: (500, {"error": "overloaded"})
    with pytest.raises(EstimatorUnavailable):
        RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META)


def test_remote_estimator_unavailable_on_refused_connection():
    est = RemoteEstimator("http://127.0.0.1:9", timeout_secs=0.5)
    with pytest.raises(EstimatorUnavailable):
        est.profile_query(make_query(), META)


def test_prompt_carries_query_metadata_and_chunk_size(stub_server):
    _Stub.response_builder = lambda body: (200, completion(ANSWER))
    RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META)
    body = _Stub.requests_seen[-1]["body"]
    assert body["logprobs"] is True
    user = body["messages"][-1]["content"]
    assert "Which quarter had the highest cost?" in user
    assert "quarterly financial reports" in user
    assert "chunk_size = 1024" in user


def test_feedback_entries_are_prepended_to_the_prompt(stub_server):
    _Stub.response_builder = lambda body: (200, completion(ANSWER))
    ledger = FeedbackLedger()
    ledger.entries.append(FeedbackEntry("old query", "the golden answer"))
    RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META, ledger)
    body = _Stub.requests_seen[-1]["body"]
    system = body["messages"][0]["content"]
    assert "old query" in system
    assert "the golden answer" in system


def test_api_key_env_var_becomes_bearer_header(stub_server, monkeypatch):
    monkeypatch.setenv("RAGSCHED_PROFILER_API_KEY", "sk-test-123")
    _Stub.response_builder = lambda body: (200, completion(ANSWER))
    RemoteEstimator(endpoint(stub_server)).profile_query(make_query(), META)
    headers = _Stub.requests_seen[-1]["headers"]
    assert headers.get("Authorization") == "Bearer sk-test-123"
