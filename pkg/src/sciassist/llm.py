"""Chat backend contract, structured-JSON extraction, and validated retry.

The scripted mock backend drives the whole system offline: scripts are
ordered response steps with optional substring matchers, consumed
strictly in order, and an exhausted script is a loud error rather than a
silent fallback.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional

MESSAGE_ROLES = frozenset({"system", "user", "assistant"})

CORRECTIVE_TEMPLATE = (
    "Your previous output failed validation: {reason}. Reply with only a JSON object."
)

DEFAULT_VALIDATION_ATTEMPTS = 2


class BackendError(Exception):
    def __init__(self, message: str, retriable: bool = False):
        super().__init__(message)
        self.retriable = retriable


class MockScriptError(BackendError):
    pass


class JsonExtractionError(Exception):
    def __init__(self, text: str):
        super().__init__("no parseable JSON object found in model output")
        self.text = text


class ValidationFailure(Exception):
    """Raised by validators handed to complete_validated."""


class ValidatedCompletionError(Exception):
    def __init__(self, last_error: str, attempts: int):
        super().__init__(
            f"no valid response after {attempts} attempt(s); last error: {last_error}"
        )
        self.last_error = last_error
        self.attempts = attempts


@dataclass
class ChatRequest:
    model_id: str
    messages: list[dict]
    temperature: float = 0.0
    max_tokens: int = 1024
    expects_json: bool = False

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request must contain at least one message")
        for msg in self.messages:
            if msg.get("role") not in MESSAGE_ROLES:
                raise ValueError(f"invalid message role: {msg.get('role')!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass
class ChatResponse:
    content: str
    latency_ms: int = 0
    token_usage: Optional[dict] = None


@dataclass
class ScriptStep:
    response: str
    expect_substring: Optional[str] = None


class ChatBackend:
    backend_id: str = "base"

    def complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class MockBackend(ChatBackend):
    """Deterministic scripted backend; steps consumed strictly in order."""

    backend_id = "mock"

    def __init__(self, steps: list[ScriptStep]):
        self._steps = list(steps)
        self._cursor = 0
        self.call_log: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str) -> "MockBackend":
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
        raw_steps = doc["steps"] if isinstance(doc, dict) else doc
        steps = [
            ScriptStep(
                response=raw["response"],
                expect_substring=raw.get("expect_substring"),
            )
            for raw in raw_steps
        ]
        return cls(steps)

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.call_log.append(request)
        if self._cursor >= len(self._steps):
            raise MockScriptError(
                f"mock script exhausted after {len(self._steps)} step(s)"
            )
        step = self._steps[self._cursor]
        self._cursor += 1
        if step.expect_substring is not None:
            rendered = "\n".join(m["content"] for m in request.messages)
            if step.expect_substring not in rendered:
                raise MockScriptError(
                    f"script step {self._cursor} expected substring "
                    f"{step.expect_substring!r} in the request"
                )
        return ChatResponse(content=step.response, latency_ms=0)


class HttpChatBackend(ChatBackend):
    """Live transport: JSON POST to a configurable endpoint.

    Endpoint and API key come from the environment so deployments can
    point at hosted or offline inference services without code changes.
    """

    ENDPOINT_ENV = "SCIASSIST_LLM_URL"
    API_KEY_ENV = "SCIASSIST_LLM_KEY"

    def __init__(self, model_id: str, endpoint: Optional[str] = None):
        self.backend_id = f"http:{model_id}"
        self.model_id = model_id
        self.endpoint = endpoint or os.environ.get(self.ENDPOINT_ENV, "")

    def complete(self, request: ChatRequest) -> ChatResponse:
        import httpx

        if not self.endpoint:
            raise BackendError(
                f"no LLM endpoint configured (set {self.ENDPOINT_ENV})", retriable=False
            )
        headers = {}
        api_key = os.environ.get(self.API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        started = time.monotonic()
        try:
            resp = httpx.post(
                self.endpoint,
                json={
                    "model": request.model_id,
                    "messages": request.messages,
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                },
                headers=headers,
                timeout=120.0,
            )
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:
            raise BackendError(f"LLM transport failure: {exc}", retriable=True) from exc
        latency = int((time.monotonic() - started) * 1000)
        return ChatResponse(
            content=doc.get("content", ""),
            latency_ms=latency,
            token_usage=doc.get("token_usage"),
        )


def complete(
    backend: ChatBackend,
    request: ChatRequest,
    *,
    tracer: Optional[Callable[..., Any]] = None,
    agent: str = "coordinator",
    attempt: int = 1,
) -> ChatResponse:
    """Run one completion, recording a model event on the turn's trace."""
    started = time.monotonic()
    response = backend.complete(request)
    latency = response.latency_ms or int((time.monotonic() - started) * 1000)
    if tracer is not None:
        from .trace import hash_json

        tracer(
            agent=agent,
            phase="model_call",
            payload={
                "model_id": request.model_id,
                "attempt": attempt,
                "prompt_hash": hash_json(request.messages),
                "response_hash": hash_json(response.content),
            },
            latency_ms=latency,
        )
    return response


_BRACE_RE = re.compile(r"\{")
_DECODER = json.JSONDecoder()


def extract_json(text: str) -> tuple[dict, tuple[int, int]]:
    """First syntactically complete JSON object in ``text``, plus its span.

    Tolerates code fences and surrounding prose.
    """
    for match in _BRACE_RE.finditer(text):
        try:
            doc, end = _DECODER.raw_decode(text, match.start())
        except ValueError:
            continue
        return doc, (match.start(), end)
    raise JsonExtractionError(text)


def complete_validated(
    backend: ChatBackend,
    request: ChatRequest,
    validator: Callable[[dict], Any],
    max_attempts: int = DEFAULT_VALIDATION_ATTEMPTS,
    *,
    tracer: Optional[Callable[..., Any]] = None,
    agent: str = "coordinator",
) -> Any:
    """Retry completions until the extracted JSON passes ``validator``.

    Each failed attempt appends a corrective user message; every attempt is
    traced. Raises ValidatedCompletionError after max_attempts failures.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    messages = list(request.messages)
    last_error = ""
    for attempt in range(1, max_attempts + 1):
        attempt_request = replace(request, messages=messages)
        response = complete(
            backend, attempt_request, tracer=tracer, agent=agent, attempt=attempt
        )
        try:
            doc, _span = extract_json(response.content)
            return validator(doc)
        except (JsonExtractionError, ValidationFailure) as exc:
            last_error = str(exc)
            messages = messages + [
                {"role": "user", "content": CORRECTIVE_TEMPLATE.format(reason=last_error)}
            ]
    raise ValidatedCompletionError(last_error, max_attempts)
