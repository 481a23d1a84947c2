"""Chat-completion transports: a live HTTP client and a scripted mock.

Both return schema-validated JSON payloads. The mock replays canned payloads
keyed by ``(role, step_key)``; see ``docs/formats.md`` for the script format.
"""

from __future__ import annotations

import copy
import functools
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import httpx
import jsonschema

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.3
DEFAULT_BASE_URL = "https://api.openai.com/v1"


class BackendError(RuntimeError):
    pass


class MissingCredentials(BackendError):
    pass


class RateLimited(BackendError):
    def __init__(self, message, retry_after=None):
        super().__init__(message)
        self.retry_after = retry_after


class SchemaValidationError(BackendError):
    """The model replied, but the reply does not match the requested schema."""

    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


class ScriptUnderrun(BackendError):
    pass


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple
    schema: Optional[dict] = None  # {"name": ..., "schema": {...json schema...}}
    temperature: Optional[float] = DEFAULT_TEMPERATURE
    role: str = ""
    step_key: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        for m in self.messages:
            if not isinstance(m, dict) or "role" not in m or "content" not in m:
                raise ValueError(f"malformed message {m!r}")
        if self.temperature is not None and not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.prompt_tokens + other.prompt_tokens,
                     self.completion_tokens + other.completion_tokens)


@dataclass(frozen=True)
class CompletionResult:
    payload: object
    usage: Usage = field(default_factory=Usage)
    latency: float = 0.0
    raw: str = ""


@functools.lru_cache(maxsize=64)
def _validator(schema_text: str):
    schema = json.loads(schema_text)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def check_payload(payload, schema: Optional[dict], raw: str = ""):
    if schema is None:
        return
    validator = _validator(json.dumps(schema["schema"], sort_keys=True))
    error = jsonschema.exceptions.best_match(validator.iter_errors(payload))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise SchemaValidationError(f"payload invalid at {where}: {error.message}", raw)


def decode_payload(raw: str, schema: Optional[dict]):
    if schema is None:
        return raw
    try:
        payload = json.loads(raw)
    except (TypeError, json.JSONDecodeError) as exc:
        raise SchemaValidationError(f"reply is not valid JSON: {exc}", raw or "") from None
    check_payload(payload, schema, raw)
    return payload


class Backend:
    """Base transport. Subclasses implement ``_complete``; the in-flight cap lives here."""

    def __init__(self, max_in_flight: int = 8):
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        with self._slots:
            return self._complete(req)

    def _complete(self, req: CompletionRequest) -> CompletionResult:  # pragma: no cover
        raise NotImplementedError


# --- scripted mock -------------------------------------------------------

@dataclass(frozen=True)
class ScriptStep:
    role: str
    key: Optional[str]
    replies: tuple  # each reply is ("payload", obj) or ("raw", str)
    usage: Optional[Usage] = None


@dataclass(frozen=True)
class MockScript:
    steps: tuple
    query: Optional[str] = None
    config: Optional[dict] = None

    @classmethod
    def from_dict(cls, d, source="<script>") -> "MockScript":
        if not isinstance(d, dict) or not isinstance(d.get("steps"), list):
            raise ScriptError(f"{source}: expected an object with a 'steps' list")
        if not d["steps"]:
            raise ScriptError(f"{source}: script has no steps")
        steps = []
        seen = set()
        for i, s in enumerate(d["steps"]):
            where = f"{source}: step {i}"
            if not isinstance(s, dict) or not isinstance(s.get("role"), str):
                raise ScriptError(f"{where}: each step needs a string 'role'")
            key = s.get("key")
            if key is not None:
                if not isinstance(key, str):
                    raise ScriptError(f"{where}: 'key' must be a string")
                if (s["role"], key) in seen:
                    raise ScriptError(f"{where}: duplicate step key {s['role']}:{key}")
                seen.add((s["role"], key))
            replies = []
            if "payload" in s:
                replies.append(("payload", s["payload"]))
            if "raw" in s:
                replies.append(("raw", s["raw"]))
            for r in s.get("replies", ()):
                if not isinstance(r, dict) or len(set(r) & {"payload", "raw"}) != 1:
                    raise ScriptError(f"{where}: each reply needs exactly one of payload/raw")
                kind = "payload" if "payload" in r else "raw"
                replies.append((kind, r[kind]))
            if not replies:
                raise ScriptError(f"{where}: step has no payload")
            usage = None
            if "usage" in s:
                u = s["usage"]
                usage = Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
            steps.append(ScriptStep(s["role"], key, tuple(replies), usage))
        return cls(steps=tuple(steps), query=d.get("query"), config=d.get("config"))

    def to_dict(self) -> dict:
        out = {"steps": []}
        if self.query is not None:
            out["query"] = self.query
        if self.config is not None:
            out["config"] = self.config
        for s in self.steps:
            entry = {"role": s.role}
            if s.key is not None:
                entry["key"] = s.key
            if len(s.replies) == 1:
                kind, value = s.replies[0]
                entry[kind] = value
            else:
                entry["replies"] = [{kind: value} for kind, value in s.replies]
            if s.usage is not None:
                entry["usage"] = {"prompt_tokens": s.usage.prompt_tokens,
                                  "completion_tokens": s.usage.completion_tokens}
            out["steps"].append(entry)
        return out


def load_script(path) -> MockScript:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScriptError(f"{path}: cannot read script: {exc}") from None
    if not text.strip():
        raise ScriptError(f"{path}: script file is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return MockScript.from_dict(data, source=str(path))


def _word_count(text: str) -> int:
    return len(text.split())


class MockBackend(Backend):
    """Replays a MockScript.

    Keyed steps answer the matching ``(role, step_key)``; unkeyed steps form a
    per-role queue consumed in call order. A keyed step with several replies
    hands them out one per call, which is how corrective retries are scripted.
    """

    def __init__(self, script: MockScript, max_in_flight: int = 8):
        super().__init__(max_in_flight)
        self.script = script
        self._lock = threading.Lock()
        self._keyed = {}
        self._queues = {}
        for s in script.steps:
            if s.key is not None:
                self._keyed[(s.role, s.key)] = s
            else:
                self._queues.setdefault(s.role, []).append(s)
        self.reset()

    def reset(self):
        with self._lock:
            self._cursor = {k: 0 for k in self._keyed}
            self._queue_pos = {r: 0 for r in self._queues}
            self._queue_reply = {}

    def _next_reply(self, req: CompletionRequest):
        k = (req.role, req.step_key)
        with self._lock:
            if k in self._keyed:
                step = self._keyed[k]
                i = self._cursor[k]
                if i >= len(step.replies):
                    raise ScriptUnderrun(f"script underrun at step {req.role}:{req.step_key} "
                                         f"(reply {i + 1} requested, {len(step.replies)} scripted)")
                self._cursor[k] = i + 1
                return step, step.replies[i]
            queue = self._queues.get(req.role, [])
            pos = self._queue_pos.get(req.role, 0)
            if pos >= len(queue):
                raise ScriptUnderrun(f"script underrun at step {req.role}:{req.step_key}")
            step = queue[pos]
            j = self._queue_reply.get((req.role, pos), 0)
            self._queue_reply[(req.role, pos)] = j + 1
            if j + 1 >= len(step.replies):
                self._queue_pos[req.role] = pos + 1
            return step, step.replies[j]

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        step, (kind, value) = self._next_reply(req)
        if kind == "raw":
            raw = value
            payload = decode_payload(raw, req.schema)
        else:
            payload = copy.deepcopy(value)
            raw = json.dumps(payload, sort_keys=True) if not isinstance(payload, str) else payload
            check_payload(payload, req.schema, raw)
        usage = step.usage or Usage(sum(_word_count(m["content"]) for m in req.messages),
                                    _word_count(raw))
        return CompletionResult(payload=payload, usage=usage, latency=0.0, raw=raw)


# --- live HTTP backend -----------------------------------------------------

class HttpBackend(Backend):
    """Speaks the chat-completions wire format with JSON-schema structured output.

    Base URL and key come from ``AGOT_BASE_URL``/``AGOT_API_KEY`` (falling back to
    ``OPENAI_BASE_URL``/``OPENAI_API_KEY``) unless passed explicitly.
    """

    def __init__(self, base_url=None, api_key=None, *, max_in_flight=8, attempts=3,
                 backoff_base=1.0, backoff_factor=2.0, timeout=120.0,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep, rng: Optional[random.Random] = None):
        super().__init__(max_in_flight)
        self.base_url = (base_url or os.environ.get("AGOT_BASE_URL")
                         or os.environ.get("OPENAI_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key or os.environ.get("AGOT_API_KEY") or os.environ.get("OPENAI_API_KEY")
        if not self.api_key:
            raise MissingCredentials(
                "no API key: set AGOT_API_KEY (or OPENAI_API_KEY), or use --mock SCRIPT")
        self.attempts = attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._client = httpx.Client(
            base_url=self.base_url, timeout=timeout, transport=transport,
            headers={"Authorization": f"Bearer {self.api_key}"})

    def close(self):
        self._client.close()

    @staticmethod
    def build_body(req: CompletionRequest) -> dict:
        body = {"model": req.model, "messages": [dict(m) for m in req.messages]}
        # None means "provider default": leave the field out entirely
        if req.temperature is not None:
            body["temperature"] = req.temperature
        if req.schema is not None:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": req.schema["name"], "schema": req.schema["schema"],
                                "strict": True},
            }
        return body

    def _delay(self, attempt: int, advisory=None) -> float:
        if advisory is not None:
            return advisory
        return self._rng.uniform(0, self.backoff_base * self.backoff_factor ** attempt)

    def _post_once(self, body: dict) -> dict:
        try:
            resp = self._client.post("/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise BackendError(f"network failure: {exc}") from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                retry_after = float(retry_after) if retry_after is not None else None
            except ValueError:
                retry_after = None
            raise RateLimited("rate limited (HTTP 429)", retry_after)
        if resp.status_code >= 500:
            raise BackendError(f"server error HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise _Fatal(f"request rejected HTTP {resp.status_code}: {resp.text[:300]}")
        return resp.json()

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        body = self.build_body(req)
        start = time.perf_counter()
        last = None
        for attempt in range(self.attempts):
            try:
                data = self._post_once(body)
                break
            except _Fatal as exc:
                raise BackendError(str(exc)) from None
            except RateLimited as exc:
                last = exc
                advisory = exc.retry_after
            except BackendError as exc:
                last = exc
                advisory = None
            if attempt + 1 < self.attempts:
                delay = self._delay(attempt, advisory)
                log.warning("%s; retrying in %.2fs (attempt %d/%d)", last, delay,
                            attempt + 1, self.attempts)
                self._sleep(delay)
        else:
            raise BackendError(f"giving up after {self.attempts} attempts: {last}")
        latency = time.perf_counter() - start
        try:
            raw = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise BackendError("response has no choices[0].message.content") from None
        payload = decode_payload(raw, req.schema)
        u = data.get("usage") or {}
        usage = Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
        return CompletionResult(payload=payload, usage=usage, latency=latency, raw=raw)


class _Fatal(Exception):
    pass
