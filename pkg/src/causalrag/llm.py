"""Provider-agnostic completion clients with record/replay cassettes.

Three interchangeable clients cover every execution mode: an HTTP provider
for live calls, a scripted mock for tests, and a cassette client that
replays recorded responses byte for byte (strict replay never touches the
network). Prompt templates live as text assets next to this module.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Protocol

import requests

from .agent import RefinementAction
from .errors import (
    LlmFailure,
    MalformedRefinementError,
    MissingCassetteEntry,
    ProviderError,
    TemplateUnboundError,
)

REFINE_TEMPLATES = {
    RefinementAction.EXPAND: "expand",
    RefinementAction.SIMPLIFY: "simplify",
    RefinementAction.DECOMPOSE: "decompose",
}

_TEMPLATE_CACHE: dict[str, str] = {}


def load_template(name: str) -> str:
    """Fetch a prompt template asset by name (without extension)."""
    if name not in _TEMPLATE_CACHE:
        try:
            path = resources.files("causalrag") / "templates" / f"{name}.txt"
            _TEMPLATE_CACHE[name] = path.read_text(encoding="utf-8")
        except (FileNotFoundError, ModuleNotFoundError) as exc:
            raise TemplateUnboundError(f"unknown template {name!r}") from exc
    return _TEMPLATE_CACHE[name]


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render_template(name: str, variables: dict[str, str]) -> str:
    """Substitute {placeholders} in one pass; every placeholder must be bound."""
    template = load_template(name)
    fields = set(_PLACEHOLDER_RE.findall(template))
    missing = fields - set(variables)
    if missing:
        raise TemplateUnboundError(
            f"template {name!r} missing variables {sorted(missing)}")
    return _PLACEHOLDER_RE.sub(lambda m: variables[m.group(1)], template)


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call: a template name, its variables, and decoding knobs."""

    template_name: str
    variables: dict[str, str] = field(default_factory=dict)
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")

    def fingerprint(self) -> str:
        """Stable hash; variable-map ordering does not matter."""
        payload = json.dumps(
            {
                "template": self.template_name,
                "variables": dict(sorted(self.variables.items())),
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def render(self) -> str:
        return render_template(self.template_name, self.variables)


class LlmClient(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class MockClient:
    """Scripted client: the response is a pure function of the request."""

    def __init__(self, script: Callable[[CompletionRequest, str], str]):
        self._script = script
        self.calls = 0

    def complete(self, request: CompletionRequest) -> str:
        prompt = request.render()
        self.calls += 1
        return self._script(request, prompt)


class HttpProviderClient:
    """HTTP completion provider with retry.

    Protocol: POST {"model", "prompt", "temperature", "max_tokens"} to
    `url`, response {"text": str}. Retries up to `attempts` times with
    exponential backoff starting at `backoff` seconds; a final non-200
    raises ProviderError.
    """

    def __init__(self, url: str, model: str = "default", api_key: str = "",
                 attempts: int = 3, backoff: float = 0.5, timeout: float = 60.0,
                 session: requests.Session | None = None):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()

    def _payload(self, request: CompletionRequest, prompt: str) -> dict:
        return {
            "model": self.model,
            "prompt": prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _parse(self, data: dict) -> str:
        return data["text"]

    def complete(self, request: CompletionRequest) -> str:
        prompt = request.render()
        payload = self._payload(request, prompt)
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                response = self._session.post(self.url, json=payload,
                                              headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = LlmFailure(f"transport error: {exc}")
                continue
            if response.status_code != 200:
                last_error = ProviderError(response.status_code, response.text)
                continue
            try:
                return self._parse(response.json())
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise LlmFailure(f"malformed provider payload: {exc}") from exc
        assert last_error is not None
        raise last_error


class ChatProviderClient(HttpProviderClient):
    """Adapter for chat-completion style providers.

    Same retry behavior as HttpProviderClient, but the request is a
    single-turn {"messages": [...]} chat and the response is read from
    choices[0].message.content.
    """

    def _payload(self, request: CompletionRequest, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _parse(self, data: dict) -> str:
        return data["choices"][0]["message"]["content"]


class Cassette:
    """Request-fingerprint -> response store, persisted as JSONL."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str) -> "Cassette":
        entries: dict[str, str] = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    entries[obj["fingerprint"]] = obj["response"]
        return cls(entries)

    def lookup(self, fingerprint: str) -> str | None:
        return self.entries.get(fingerprint)

    def store(self, request: CompletionRequest, response: str,
              path: str | None = None) -> None:
        with self._lock:
            self.entries[request.fingerprint()] = response
            if path is not None:
                row = {
                    "fingerprint": request.fingerprint(),
                    "template": request.template_name,
                    "response": response,
                }
                with open(path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(row, sort_keys=True) + "\n")


class ReplayClient:
    """Strict replay: cassette lookups only, never a live call."""

    def __init__(self, cassette: Cassette):
        self.cassette = cassette

    def complete(self, request: CompletionRequest) -> str:
        request.render()  # validate template and bindings even in replay
        response = self.cassette.lookup(request.fingerprint())
        if response is None:
            raise MissingCassetteEntry(
                f"no cassette entry for template {request.template_name!r} "
                f"fingerprint {request.fingerprint()[:12]}")
        return response


class RecordingClient:
    """Record mode: serve from the cassette when possible, otherwise call the
    inner client and persist its response."""

    def __init__(self, inner: LlmClient, cassette: Cassette, path: str | None = None):
        self.inner = inner
        self.cassette = cassette
        self.path = path

    def complete(self, request: CompletionRequest) -> str:
        cached = self.cassette.lookup(request.fingerprint())
        if cached is not None:
            return cached
        response = self.inner.complete(request)
        self.cassette.store(request, response, self.path)
        return response


def client_from_env(cassette_path: str | None = None,
                    mode: str | None = None) -> LlmClient:
    """Build a client from MODE / CAUSALRAG_PROVIDER_URL / CAUSALRAG_API_KEY.

    MODE is one of replay (default), record, or live. Replay and record need
    a cassette path; record and live need a provider URL.
    """
    mode = (mode or os.environ.get("MODE", "replay")).lower()
    if mode not in ("replay", "record", "live"):
        raise ValueError(f"unknown MODE {mode!r}")
    if mode == "replay":
        if not cassette_path:
            raise ValueError("replay mode needs a cassette path")
        return ReplayClient(Cassette.load(cassette_path))
    url = os.environ.get("CAUSALRAG_PROVIDER_URL", "")
    if not url:
        raise ValueError(f"{mode} mode needs CAUSALRAG_PROVIDER_URL")
    provider = HttpProviderClient(
        url=url,
        model=os.environ.get("CAUSALRAG_MODEL", "default"),
        api_key=os.environ.get("CAUSALRAG_API_KEY", ""),
    )
    if mode == "live":
        return provider
    if not cassette_path:
        raise ValueError("record mode needs a cassette path")
    return RecordingClient(provider, Cassette.load(cassette_path), cassette_path)


def refine_query(client: LlmClient, query: str, action: RefinementAction,
                 context: str = "", condensed: bool = False) -> list[str]:
    """Run one refinement action through the client and parse the result.

    Simplify and expand must come back as exactly one non-empty line;
    decompose as 2-4 lines (one subquery per line). Anything else raises
    MalformedRefinementError so the caller can fall back to the original
    query.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    name = REFINE_TEMPLATES[action]
    if condensed:
        name += "_condensed"
        variables = {"query": query}
    else:
        variables = {"query": query, "context": context}
    request = CompletionRequest(template_name=name, variables=variables,
                                temperature=0.0)
    text = client.complete(request)
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if action is RefinementAction.DECOMPOSE:
        if not 2 <= len(lines) <= 4:
            raise MalformedRefinementError(
                f"decompose returned {len(lines)} lines, expected 2-4")
    else:
        if len(lines) != 1:
            raise MalformedRefinementError(
                f"{action.label} returned {len(lines)} lines, expected 1")
    return lines
