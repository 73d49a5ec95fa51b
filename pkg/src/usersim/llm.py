"""Chat-completion backends: OpenAI-compatible HTTP and a scripted replay."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
API_KEY_ENV = "USERSIM_API_KEY"

GENERATION_TEMPERATURE = 0.8
USER_TEMPERATURE = 0.8
JUDGE_TEMPERATURE = 0.0


class LLMError(RuntimeError):
    attempts: int = 1


class TransportError(LLMError):
    pass


class ProtocolError(LLMError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ScriptExhausted(LLMError):
    pass


class ScriptMismatch(LLMError):
    """A scripted reply expected a substring the prompt did not contain."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    model_label: str = ""

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ValueError("a chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def system(self) -> str:
        return self.messages[0].content if self.messages[0].role == "system" else ""

    @property
    def text(self) -> str:
        """All message contents joined, used for prompt assertions."""
        return "\n".join(m.content for m in self.messages)

    def body(self) -> dict:
        return {
            "model": self.model_label,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def with_appended(self, role: str, content: str) -> "ChatRequest":
        return ChatRequest(
            messages=(*self.messages, Message(role, content)),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            model_label=self.model_label,
        )


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: tuple[int, int] | None = None
    latency: float = 0.0


class Backend(Protocol):
    model_label: str

    def complete(self, req: ChatRequest) -> ChatResponse: ...


def complete(backend: Backend, req: ChatRequest) -> ChatResponse:
    return backend.complete(req)


@dataclass(frozen=True)
class ScriptStep:
    reply: str
    expect: str | None = None

    @classmethod
    def coerce(cls, item) -> "ScriptStep":
        if isinstance(item, ScriptStep):
            return item
        if isinstance(item, str):
            return cls(item)
        if isinstance(item, dict) and "reply" in item:
            reply = item["reply"]
            if not isinstance(reply, str):
                reply = json.dumps(reply, ensure_ascii=False)
            return cls(reply, item.get("expect"))
        if isinstance(item, dict):
            return cls(json.dumps(item, ensure_ascii=False))
        raise TypeError(f"cannot use {item!r} as a script step")


class ScriptedBackend:
    """Replays canned replies in call order.

    Each step may carry ``expect``, a substring that must occur in the
    incoming prompt; a miss raises :class:`ScriptMismatch`.
    """

    def __init__(self, script: Iterable = (), model_label: str = "scripted"):
        self.script = [ScriptStep.coerce(s) for s in script]
        self.model_label = model_label
        self.requests: list[ChatRequest] = []
        self._pos = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return len(self.script) - self._pos

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(req)
            if self._pos >= len(self.script):
                raise ScriptExhausted(f"script of {len(self.script)} replies exhausted")
            step = self.script[self._pos]
            self._pos += 1
        if step.expect is not None and step.expect not in req.text:
            raise ScriptMismatch(f"prompt does not contain {step.expect!r}")
        return ChatResponse(content=step.reply)


class CallableBackend:
    """Adapts a plain function ``f(request) -> str`` to the backend protocol."""

    def __init__(self, fn: Callable[[ChatRequest], str], model_label: str = "callable"):
        self.fn = fn
        self.model_label = model_label
        self.calls = 0

    def complete(self, req: ChatRequest) -> ChatResponse:
        self.calls += 1
        return ChatResponse(content=self.fn(req))


class HTTPBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model_label: str,
        *,
        api_key: str | None = None,
        api_key_env: str = API_KEY_ENV,
        timeout: float = 60.0,
        temperature: float | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_label = model_label
        self.temperature = temperature
        self._api_key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, req: ChatRequest) -> ChatResponse:
        body = req.body()
        if not body["model"]:
            body["model"] = self.model_label
        if self.temperature is not None:
            body["temperature"] = self.temperature
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        started = time.monotonic()
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        latency = time.monotonic() - started
        if not 200 <= resp.status_code < 300:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"unparseable completion body: {exc}", status=resp.status_code) from exc
        if content is None:
            raise ProtocolError("completion has no content", status=resp.status_code)
        usage = payload.get("usage") or {}
        tokens = None
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            tokens = (usage["prompt_tokens"], usage["completion_tokens"])
        return ChatResponse(content=content, usage=tokens, latency=latency)

    def close(self):
        self._client.close()


def default_retryable(exc: BaseException) -> bool:
    if isinstance(exc, TransportError):
        return True
    if isinstance(exc, ProtocolError):
        return exc.status is None or exc.status == 429 or exc.status >= 500
    return False


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5
    retryable: Callable[[BaseException], bool] = field(default=default_retryable)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_base < 0:
            raise ValueError("backoff_base must be >= 0")


def with_retry(
    backend: Backend,
    req: ChatRequest,
    policy: RetryPolicy = RetryPolicy(),
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """Call ``backend`` with exponential backoff on retryable errors.

    The error that ends the loop gets an ``attempts`` attribute.
    """
    attempt = 0
    while True:
        attempt += 1
        try:
            return backend.complete(req)
        except Exception as exc:
            if attempt >= policy.max_attempts or not policy.retryable(exc):
                exc.attempts = attempt
                raise
            delay = policy.backoff_base * (2 ** (attempt - 1))
            logger.info("attempt %d failed (%s), retrying in %.2fs", attempt, exc, delay)
            sleep(delay)


class RetryingBackend:
    """Wraps a backend so every call goes through :func:`with_retry`."""

    def __init__(self, inner: Backend, policy: RetryPolicy = RetryPolicy(), sleep=time.sleep):
        self.inner = inner
        self.policy = policy
        self.sleep = sleep
        self.model_label = inner.model_label

    def complete(self, req: ChatRequest) -> ChatResponse:
        return with_retry(self.inner, req, self.policy, sleep=self.sleep)


def load_script(path) -> list | dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_messages(system: str | None, history: Sequence[tuple[str, str]]) -> tuple[Message, ...]:
    msgs = [Message("system", system)] if system else []
    msgs.extend(Message(role, content) for role, content in history)
    return tuple(msgs)
