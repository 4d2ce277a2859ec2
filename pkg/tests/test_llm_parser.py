import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from stcm.errors import OfflineMode, ParseExhausted, SchemaError, TransportError
from stcm.llm_parser import (LlmClient, LlmEndpointConfig, build_system_prompt, extract_json_document, parse_text,
                             redact)

GOOD = {"scene_id": "x", "scenario_class": "urban_street",
        "targets": [{"id": "car", "class": "vehicle", "position": [20, 5, 0]}]}
BAD = {"scenario_class": "urban_street", "targets": [{"id": "car", "class": "tank", "position": [0, 0, 0]}]}


class Endpoint:
    """Local chat-completions stub replying with a scripted sequence of contents."""

    def __init__(self, replies, status=200):
        self.replies = list(replies)
        self.status = status
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((self.path, dict(self.headers), body))
                if outer.status != 200:
                    self.send_response(outer.status)
                    self.end_headers()
                    return
                content = outer.replies.pop(0) if outer.replies else "no json here"
                payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]})
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(payload.encode())

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def endpoint():
    made = []

    def make(replies, status=200):
        ep = Endpoint(replies, status)
        made.append(ep)
        return ep
    yield make
    for ep in made:
        ep.close()


def cfg(url, **kw):
    return LlmEndpointConfig(base_url=url, model_name="m", api_key="sk-secret-123", timeout=5.0, **kw)


def test_prompt_is_stable_and_complete():
    p = build_system_prompt()
    assert p == build_system_prompt()
    for word in ("component", "object", "scene", "intent", "scenario_class", "urban_street", "converging"):
        assert word in p


def test_extract_json_document():
    assert extract_json_document('Sure! ```json\n{"a": {"b": 1}}\n``` done') == {"a": {"b": 1}}
    assert extract_json_document('{bad {"ok": true}') == {"ok": True}
    with pytest.raises(SchemaError):
        extract_json_document("nothing [1, 2]")


def test_first_reply_valid(endpoint):
    ep = endpoint([json.dumps(GOOD)])
    client = LlmClient(cfg(ep.url))
    scene = client.parse("a car on a street")
    assert scene.targets[0].id == "car" and client.last_retries == 0
    path, headers, body = ep.requests[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer sk-secret-123"
    assert body["messages"][0] == {"role": "system", "content": build_system_prompt()}
    assert body["temperature"] == 0.0 and body["model"] == "m"


def test_reask_with_error_feedback(endpoint):
    ep = endpoint(["I think it's a street.", json.dumps(BAD), "ok: " + json.dumps(GOOD)])
    client = LlmClient(cfg(ep.url, max_retries=2))
    client.parse("a car")
    assert client.last_retries == 2
    last = ep.requests[-1][2]["messages"]
    assert last[-1]["role"] == "user" and "invalid" in last[-1]["content"]
    assert "targets[0].class" in last[-1]["content"]
    assert last[-2] == {"role": "assistant", "content": json.dumps(BAD)}


def test_exhausted(endpoint):
    ep = endpoint([json.dumps(BAD)] * 3)
    with pytest.raises(ParseExhausted) as info:
        parse_text("a tank", cfg(ep.url, max_retries=1))
    assert len(ep.requests) == 2 and isinstance(info.value.last_error, SchemaError)


def test_transport_errors(endpoint):
    ep = endpoint([], status=503)
    with pytest.raises(TransportError):
        parse_text("x", cfg(ep.url))
    with pytest.raises(TransportError):
        parse_text("x", cfg("http://127.0.0.1:9/v1", max_retries=0))


def test_offline_mode():
    with pytest.raises(OfflineMode):
        parse_text("a car", LlmEndpointConfig())


def test_key_never_logged(endpoint, caplog):
    ep = endpoint([json.dumps(BAD), json.dumps(GOOD)])
    with caplog.at_level(logging.DEBUG, logger="stcm.llm_parser"):
        parse_text("a car", cfg(ep.url))
    assert "sk-secret-123" not in caplog.text and "<redacted>" in caplog.text
    assert "sk-secret-123" not in repr(cfg(ep.url))
    assert redact({"authorization": "Bearer k", "X": "1"}) == {"authorization": "<redacted>", "X": "1"}


def test_config_validation(monkeypatch):
    monkeypatch.setenv("STCM_LLM_API_KEY", "from-env")
    assert LlmEndpointConfig().api_key == "from-env"
    for bad in ({"timeout": 0}, {"max_retries": -1}, {"temperature": 3.0}):
        with pytest.raises(ValueError):
            LlmEndpointConfig(**bad)
