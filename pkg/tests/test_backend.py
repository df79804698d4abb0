"""Transcript store, replay, and HTTP completion client tests."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from yamlsmith import backend
from yamlsmith.backend import (
    ConnectionFailedError,
    GenerationRequest,
    HTTPStatusError,
    MalformedBodyError,
    MalformedRecordError,
    TranscriptMissError,
    complete,
    load_transcripts,
    prompt_digest,
    replay_complete,
    unescape_publishing_artifacts,
)

A4_DIGEST = "65e9d4cc22acfb19164f3b3b7f281a0a8482ce365d1d933ab737120205cd38fd"
A5_DIGEST = "1b97ad465fcc3a8799b437bac31e6a04b0a7c66b27c993aa3db7346d45dcf102"


# ---------------------------------------------------------------------------
# Store


def test_store_counts(store):
    assert len(store.records) == 8
    assert len(store) == 8          # shots, summed over digests
    assert len(store.entries) == 5  # distinct prompts


def test_fixture_ids(records):
    assert sorted(records) == [
        "annexe1.tir1", "annexe2.tir1", "annexe3.tir1", "annexe3.tir2",
        "annexe4.tir1", "annexe4.tir2", "annexe4.tir3", "annexe5.tir1",
    ]


def test_digest_goldens(records):
    assert prompt_digest(records["annexe4.tir1"].prompt) == A4_DIGEST
    assert prompt_digest(records["annexe5.tir1"].prompt) == A5_DIGEST
    # Stable across calls and insensitive to interning games.
    copy = str(records["annexe5.tir1"].prompt.encode().decode())
    assert prompt_digest(copy) == A5_DIGEST


def test_identical_prompts_share_a_digest(records):
    a4 = [records[f"annexe4.tir{i}"].prompt for i in (1, 2, 3)]
    assert a4[0] == a4[1] == a4[2]
    # A different model given the same prompt text also collides.
    assert records["annexe2.tir1"].prompt == records["annexe3.tir1"].prompt


def test_replay_returns_first_shot(store, records):
    request = GenerationRequest(prompt=records["annexe4.tir2"].prompt)
    response = replay_complete(request, store)
    assert response.text == records["annexe4.tir1"].response
    assert response.model_name == records["annexe4.tir1"].model
    assert response.finish_reason == "stop"
    # Deterministic: same answer every time.
    assert replay_complete(request, store).text == response.text


def test_replay_miss_raises(store):
    request = GenerationRequest(prompt="never stored")
    with pytest.raises(TranscriptMissError) as err:
        replay_complete(request, store)
    assert prompt_digest("never stored") in str(err.value)


def test_unescape_publishing_artifacts():
    assert unescape_publishing_artifacts("role \\'x\\'") == "role 'x'"
    assert unescape_publishing_artifacts("a\\tb") == "a\tb"
    assert unescape_publishing_artifacts("plain") == "plain"


def test_load_skips_blank_lines(tmp_path):
    record = {
        "annexe": 1, "tir": 1, "model": "m", "prompt": "p", "response": "r",
    }
    path = tmp_path / "t.jsonl"
    path.write_text("\n" + json.dumps(record) + "\n\n", encoding="utf-8")
    assert len(load_transcripts(str(path)).records) == 1


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("{not json", "line 1"),
        ('["annexe"]', "object"),
        ('{"annexe": 1, "tir": 1, "model": "m", "prompt": "p"}', "response"),
    ],
)
def test_malformed_records_rejected(tmp_path, line, fragment):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(MalformedRecordError) as err:
        load_transcripts(str(path))
    assert fragment in str(err.value)


# ---------------------------------------------------------------------------
# HTTP client


class _Handler(BaseHTTPRequestHandler):
    """Scriptable completion endpoint; behavior keyed by the prompt text."""

    captured = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length))
        _Handler.captured.append((self.path, payload))
        prompt = payload.get("prompt", "")
        if prompt == "boom":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"server error")
            return
        if prompt == "garbage":
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(b"not json at all")
            return
        if prompt == "empty":
            body = {"no_content": True}
        else:
            body = {
                "content": f"echo({prompt})",
                "stopped_eos": prompt != "truncated",
            }
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def endpoint():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_complete_round_trip(endpoint):
    _Handler.captured.clear()
    request = GenerationRequest(
        prompt="hello", model_name="m1", max_tokens=64, temperature=0.5,
        stop=("###",),
    )
    response = complete(request, endpoint)
    assert response.text == "echo(hello)"
    assert response.model_name == "m1"
    assert response.finish_reason == "stop"
    assert response.latency_ms >= 0.0
    path, payload = _Handler.captured[-1]
    assert path == "/completion"
    assert payload == {
        "prompt": "hello", "n_predict": 64, "temperature": 0.5, "stop": ["###"],
    }


def test_complete_trailing_slash_endpoint(endpoint):
    response = complete(GenerationRequest(prompt="hi"), endpoint + "/")
    assert response.text == "echo(hi)"


def test_complete_length_finish(endpoint):
    response = complete(GenerationRequest(prompt="truncated"), endpoint)
    assert response.finish_reason == "length"


def test_complete_http_error(endpoint):
    with pytest.raises(HTTPStatusError) as err:
        complete(GenerationRequest(prompt="boom"), endpoint)
    assert err.value.status == 500


def test_complete_malformed_body(endpoint):
    with pytest.raises(MalformedBodyError):
        complete(GenerationRequest(prompt="garbage"), endpoint)
    with pytest.raises(MalformedBodyError):
        complete(GenerationRequest(prompt="empty"), endpoint)


def test_complete_connection_refused():
    with pytest.raises(ConnectionFailedError):
        complete(GenerationRequest(prompt="x"), "http://127.0.0.1:9", timeout_s=2.0)
