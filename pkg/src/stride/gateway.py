"""Model-provider abstraction.

Every role (planner, supervisor, extractor, reasoner, fallback, fact_selector)
goes through :class:`Gateway`, which owns defaults, the in-flight limit and
usage accounting. Providers only turn a :class:`ChatRequest` into a
:class:`ChatResponse`.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import ProviderUnavailable, ScriptParseError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_TOKENS = 512
DEFAULT_MAX_IN_FLIGHT = 4

ENV_BASE_URL = "STRIDE_API_BASE"
ENV_API_KEY = "STRIDE_API_KEY"
ENV_MODEL = "STRIDE_MODEL"
ENV_EMBED_MODEL = "STRIDE_EMBED_MODEL"


class Role(str, enum.Enum):
    PLANNER = "planner"
    SUPERVISOR = "supervisor"
    EXTRACTOR = "extractor"
    REASONER = "reasoner"
    FALLBACK = "fallback"
    FACT_SELECTOR = "fact_selector"


@dataclass(frozen=True)
class ChatRequest:
    role_tag: Role
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        object.__setattr__(self, "role_tag", Role(self.role_tag))
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": self.user_prompt},
        ]


@dataclass(frozen=True)
class Usage:
    prompt: int = 0
    completion: int = 0

    def __post_init__(self) -> None:
        if self.prompt < 0 or self.completion < 0:
            raise ValidationError("token counts must be >= 0")

    def __add__(self, other: Usage) -> Usage:
        return Usage(self.prompt + other.prompt, self.completion + other.completion)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: Usage = Usage()
    truncated: bool = False


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def count_tokens(text: str) -> int:
    """Whitespace token count; the usage figure reported by offline providers."""
    return len(text.split())


def offline_usage(request: ChatRequest, text: str) -> Usage:
    return Usage(count_tokens(request.system_prompt) + count_tokens(request.user_prompt), count_tokens(text))


# --------------------------------------------------------------------------
# scripted provider


@dataclass(frozen=True)
class ScriptRule:
    role_tag: Role
    match: tuple[str, ...]
    response: str

    def matches(self, request: ChatRequest) -> bool:
        return request.role_tag == self.role_tag and all(s in request.user_prompt for s in self.match)

    def to_dict(self) -> dict[str, Any]:
        return {"role_tag": self.role_tag.value, "match": list(self.match), "response": self.response}


class ScriptedProvider:
    """Returns the response of the first rule whose role and substrings match."""

    def __init__(self, rules: Iterable[ScriptRule] = ()):
        self.rules = tuple(rules)

    def complete(self, request: ChatRequest) -> ChatResponse:
        for rule in self.rules:
            if rule.matches(request):
                return ChatResponse(rule.response, offline_usage(request, rule.response))
        raise ProviderUnavailable(
            f"no script rule matches {request.role_tag.value} request: {request.user_prompt[:80]!r}"
        )


def load_script(path: str | Path) -> ScriptedProvider:
    """Read a script file: one rule per line, ``{role_tag, match, response}``."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("//"):
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScriptParseError(lineno, exc.msg) from exc
            if not isinstance(raw, dict):
                raise ScriptParseError(lineno, "rule must be an object")
            try:
                role = Role(raw["role_tag"])
            except (KeyError, ValueError):
                raise ScriptParseError(lineno, f"bad role_tag {raw.get('role_tag')!r}") from None
            match = raw.get("match", [])
            if isinstance(match, str):
                match = [match]
            if not isinstance(match, list) or not all(isinstance(m, str) for m in match):
                raise ScriptParseError(lineno, "match must be a list of strings")
            response = raw.get("response")
            if not isinstance(response, str):
                raise ScriptParseError(lineno, "response must be a string")
            rules.append(ScriptRule(role, tuple(match), response))
    return ScriptedProvider(rules)


def save_script(path: str | Path, rules: Iterable[ScriptRule]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules:
            fh.write(json.dumps(rule.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


class FunctionProvider:
    """Adapts a ``request -> text`` callable; used by the oracle harness."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = self.fn(request)
        return ChatResponse(text, offline_usage(request, text))


class RecordingProvider:
    """Wraps a provider and keeps every (request, response) exchange."""

    def __init__(self, inner: Provider):
        self.inner = inner
        self._lock = threading.Lock()
        self.exchanges: list[tuple[ChatRequest, ChatResponse]] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.exchanges.append((request, response))
        return response

    def to_rules(self) -> list[ScriptRule]:
        """Exact-prompt replay rules, longest prompt first so no rule shadows another."""
        seen: dict[tuple[Role, str], str] = {}
        with self._lock:
            for req, resp in self.exchanges:
                seen.setdefault((req.role_tag, req.user_prompt), resp.text)
        ordered = sorted(seen.items(), key=lambda kv: (-len(kv[0][1]), kv[0][0].value, kv[0][1]))
        return [ScriptRule(role, (prompt,), text) for (role, prompt), text in ordered]


# --------------------------------------------------------------------------
# remote provider


class RemoteChatProvider:
    """Client for any chat-completion compatible HTTP endpoint."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None,
        model: str,
        retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.model = model
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport
        )

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs: Any) -> RemoteChatProvider:
        env = os.environ if env is None else env
        base = env.get(ENV_BASE_URL)
        if not base:
            raise ProviderUnavailable(f"{ENV_BASE_URL} is not set")
        return cls(base, env.get(ENV_API_KEY), env.get(ENV_MODEL, "default"), **kwargs)

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._client.post(path, json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                return resp.json()
            except httpx.HTTPStatusError as exc:
                if exc.response.status_code != 429 and exc.response.status_code < 500:
                    raise ProviderUnavailable(f"provider rejected request: {exc}") from exc
                last = exc
            except (httpx.TransportError, ValueError) as exc:
                last = exc
            if attempt + 1 < self.retries:
                delay = self.backoff_s * (2**attempt)
                logger.warning("provider call failed (%s); retrying in %.2fs", last, delay)
                self._sleep(delay)
        raise ProviderUnavailable(f"provider unavailable after {self.retries} attempts: {last}")

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = self._post("/chat/completions", self.payload(request))
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed provider response: {body!r:.200}") from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            text,
            Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            truncated=choice.get("finish_reason") == "length",
        )

    def embed(self, texts: Sequence[str], model: str | None = None) -> list[list[float]]:
        body = self._post("/embeddings", {"model": model or self.model, "input": list(texts)})
        try:
            return [row["embedding"] for row in sorted(body["data"], key=lambda r: r["index"])]
        except (KeyError, TypeError) as exc:
            raise ProviderUnavailable("malformed embedding response") from exc

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# gateway


@dataclass
class UsageMeter:
    usage: Usage = Usage()
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, usage: Usage) -> None:
        with self._lock:
            self.usage = self.usage + usage
            self.calls += 1

    def as_dict(self) -> dict[str, int]:
        return {"prompt": self.usage.prompt, "completion": self.usage.completion, "calls": self.calls}


class Gateway:
    """Uniform entry point for model calls with defaults and accounting."""

    def __init__(
        self,
        provider: Provider,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        role_overrides: Mapping[str, Mapping[str, Any]] | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ):
        self.provider = provider
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.role_overrides = {Role(k): dict(v) for k, v in (role_overrides or {}).items()}
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.meter = UsageMeter()

    def request(self, role: Role | str, system_prompt: str, user_prompt: str) -> ChatRequest:
        role = Role(role)
        over = self.role_overrides.get(role, {})
        return ChatRequest(
            role,
            system_prompt,
            user_prompt,
            temperature=float(over.get("temperature", self.temperature)),
            max_tokens=int(over.get("max_tokens", self.max_tokens)),
        )

    def complete(
        self, role: Role | str, system_prompt: str, user_prompt: str, meter: UsageMeter | None = None
    ) -> ChatResponse:
        request = self.request(role, system_prompt, user_prompt)
        with self._slots:
            response = self.provider.complete(request)
        if response.truncated:
            logger.info("%s response truncated at max_tokens=%d", request.role_tag.value, request.max_tokens)
        self.meter.add(response.token_usage)
        if meter is not None:
            meter.add(response.token_usage)
        return response
