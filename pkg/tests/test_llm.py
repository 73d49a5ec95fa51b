import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usersim.llm import (
    ChatRequest,
    HTTPBackend,
    Message,
    ProtocolError,
    RetryingBackend,
    RetryPolicy,
    ScriptedBackend,
    ScriptExhausted,
    ScriptMismatch,
    TransportError,
    build_messages,
    complete,
    with_retry,
)


def req(text="hi", **kw):
    return ChatRequest((Message("system", "sys"), Message("user", text)), **kw)


class Flaky:
    """Fails ``n_fail`` times with ``error`` and then answers."""

    model_label = "flaky"

    def __init__(self, n_fail, error=None):
        self.n_fail = n_fail
        self.error = error or TransportError("boom")
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.calls <= self.n_fail:
            raise self.error
        from usersim.llm import ChatResponse

        return ChatResponse(f"ok after {self.calls}")


no_sleep = lambda s: None  # noqa: E731


def test_scripted_echo():
    assert complete(ScriptedBackend(["hello"]), req()).content == "hello"


def test_scripted_empty_script():
    with pytest.raises(ScriptExhausted):
        complete(ScriptedBackend([]), req())


def test_scripted_expect_checks_prompt():
    backend = ScriptedBackend([{"reply": "a", "expect": "hi"}, {"reply": "b", "expect": "absent"}])
    assert backend.complete(req()).content == "a"
    with pytest.raises(ScriptMismatch):
        backend.complete(req())


def test_scripted_dict_steps_become_json():
    backend = ScriptedBackend([{"gender": "female"}])
    assert json.loads(backend.complete(req()).content) == {"gender": "female"}


@given(st.lists(st.text(max_size=20), max_size=10))
def test_scripted_is_deterministic(replies):
    a, b = ScriptedBackend(replies), ScriptedBackend(replies)
    out_a = [a.complete(req(str(i))).content for i in range(len(replies))]
    out_b = [b.complete(req(str(i))).content for i in range(len(replies))]
    assert out_a == out_b == replies


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(())
    with pytest.raises(ValueError):
        req(temperature=-0.1)
    with pytest.raises(ValueError):
        req(max_tokens=0)
    with pytest.raises(ValueError):
        Message("tool", "x")


def test_history_in_order_oldest_first():
    msgs = build_messages("sys", [("user", "1"), ("assistant", "2"), ("user", "3")])
    body = ChatRequest(msgs, model_label="m").body()
    assert [m["content"] for m in body["messages"]] == ["sys", "1", "2", "3"]
    assert body["messages"][0]["role"] == "system"
    assert set(body) == {"model", "messages", "temperature", "max_tokens"}


def test_retry_succeeds_on_third_attempt():
    backend = Flaky(2)
    resp = with_retry(backend, req(), RetryPolicy(max_attempts=3), sleep=no_sleep)
    assert resp.content == "ok after 3" and backend.calls == 3


def test_retry_exhaustion_annotates_attempts():
    backend = Flaky(10)
    with pytest.raises(TransportError) as info:
        with_retry(backend, req(), RetryPolicy(max_attempts=2), sleep=no_sleep)
    assert info.value.attempts == 2 and backend.calls == 2


def test_non_retryable_fails_immediately():
    backend = Flaky(10, ProtocolError("bad request", status=400))
    with pytest.raises(ProtocolError) as info:
        with_retry(backend, req(), RetryPolicy(max_attempts=5), sleep=no_sleep)
    assert info.value.attempts == 1 and backend.calls == 1


def test_backoff_is_exponential():
    delays = []
    with pytest.raises(TransportError):
        with_retry(Flaky(10), req(), RetryPolicy(max_attempts=4, backoff_base=0.5), sleep=delays.append)
    assert delays == [0.5, 1.0, 2.0]


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 10))
def test_retry_never_exceeds_max_attempts(max_attempts, n_fail):
    backend = Flaky(n_fail)
    try:
        with_retry(backend, req(), RetryPolicy(max_attempts=max_attempts), sleep=no_sleep)
    except TransportError:
        pass
    assert backend.calls <= max_attempts
    assert backend.calls == min(n_fail + 1, max_attempts)


def test_retrying_backend_wraps():
    backend = RetryingBackend(Flaky(1), RetryPolicy(max_attempts=2), sleep=no_sleep)
    assert backend.complete(req()).content == "ok after 2"


def test_policy_validation():
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)


# ----------------------------------------------------------------- HTTP backend


class StubHandler(BaseHTTPRequestHandler):
    seen: list = []
    mode = "ok"

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        StubHandler.seen.append((self.path, dict(self.headers), body))
        if StubHandler.mode == "ok":
            payload = {
                "choices": [{"message": {"role": "assistant", "content": "stub says hi"}}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 3},
            }
            self._reply(200, payload)
        elif StubHandler.mode == "garbage":
            self._reply(200, {"nothing": True})
        else:
            self._reply(503, {"error": "overloaded"})

    def _reply(self, status, payload):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_url():
    StubHandler.seen = []
    StubHandler.mode = "ok"
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()
    server.server_close()


def test_http_backend_against_stub(stub_url, monkeypatch):
    monkeypatch.setenv("USERSIM_API_KEY", "sk-test")
    backend = HTTPBackend(stub_url, "gpt-4o")
    resp = backend.complete(req("question", temperature=0.8, max_tokens=20))
    assert resp.content == "stub says hi"
    assert resp.usage == (7, 3)
    path, headers, body = StubHandler.seen[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer sk-test"
    assert body == {
        "model": "gpt-4o",
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "question"}],
        "temperature": 0.8,
        "max_tokens": 20,
    }


def test_http_backend_without_key_sends_no_auth(stub_url, monkeypatch):
    monkeypatch.delenv("USERSIM_API_KEY", raising=False)
    HTTPBackend(stub_url, "m").complete(req())
    assert "Authorization" not in StubHandler.seen[0][1]


def test_http_backend_temperature_override(stub_url):
    HTTPBackend(stub_url, "m", temperature=0.0).complete(req(temperature=0.8))
    assert StubHandler.seen[0][2]["temperature"] == 0.0


def test_http_backend_unparseable_body(stub_url):
    StubHandler.mode = "garbage"
    with pytest.raises(ProtocolError):
        HTTPBackend(stub_url, "m").complete(req())


def test_http_backend_5xx_is_retried(stub_url):
    StubHandler.mode = "down"
    backend = RetryingBackend(HTTPBackend(stub_url, "m"), RetryPolicy(max_attempts=3), sleep=no_sleep)
    with pytest.raises(ProtocolError) as info:
        backend.complete(req())
    assert info.value.status == 503 and info.value.attempts == 3
    assert len(StubHandler.seen) == 3


def test_http_backend_unreachable():
    with pytest.raises(TransportError):
        HTTPBackend("http://127.0.0.1:9", "m", timeout=2).complete(req())
