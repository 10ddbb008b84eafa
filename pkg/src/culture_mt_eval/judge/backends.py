"""Judge backends: a scripted mock, an echo backend and a remote chat endpoint.

The mock script is JSON::

    {
      "model_id": "mock-judge",
      "rules": [
        {"template": "validator",
         "when": {"HYPOTHESIS": {"contains": "bamboo"}},
         "response": "Reasoning: wrong referent\\nDecision: INVALID"},
        {"template": "fidelity", "responses": [{"error": "timeout"}, "Score: 4"]}
      ],
      "defaults": {"clarity": "Score: 4"}
    }

Rules are tried in order; the first whose template and binding predicates
match answers.  ``template`` matches the request's template id exactly or
as a family prefix (``"fidelity"`` also covers ``fidelity_no_reference``).
A predicate is a plain string (substring test) or one of ``equals``,
``contains``, ``not_contains``, ``regex``; the pseudo-binding ``PROMPT``
tests the rendered prompt.  ``responses`` is consumed one entry per call
for the same template and bindings (retries and repair re-queries
included) and the last entry repeats.  Entries are text, or
``{"error": msg, "transient": true}``, ``{"payload": <any JSON>}`` or
``{"echo": "BINDING"}``.
"""
from __future__ import annotations

import json
import os
import re
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Optional, Protocol

from .templates import RenderedPrompt

DEFAULT_API_KEY_ENV = "CULTURE_MT_EVAL_API_KEY"


class BackendError(RuntimeError):
    def __init__(self, message: str, transient: bool = False):
        super().__init__(message)
        self.transient = transient


class JudgeBackend(Protocol):
    model_id: str

    def complete(self, prompt: RenderedPrompt, request) -> Any: ...


def _predicate_ok(pred: Any, value: Optional[str]) -> bool:
    if value is None:
        return False
    if isinstance(pred, str):
        return pred in value
    if not isinstance(pred, dict):
        raise ValueError(f"bad predicate {pred!r}")
    for op, arg in pred.items():
        if op == "equals" and value != arg:
            return False
        if op == "contains" and arg not in value:
            return False
        if op == "not_contains" and arg in value:
            return False
        if op == "regex" and not re.search(arg, value):
            return False
        if op not in ("equals", "contains", "not_contains", "regex"):
            raise ValueError(f"unknown predicate operator {op!r}")
    return True


def _template_ok(rule_template: Any, template_id: str) -> bool:
    names = [rule_template] if isinstance(rule_template, str) else list(rule_template)
    return any(n == "*" or n == template_id or template_id.startswith(n + "_") for n in names)


class MockBackend:
    """Deterministic scripted judge for offline runs."""

    def __init__(self, script: dict, model_id: Optional[str] = None):
        self.script = script
        self.model_id = model_id or script.get("model_id", "mock")
        self.rules = list(script.get("rules", []))
        self.defaults = dict(script.get("defaults", {}))
        self.calls = 0
        self._seen: dict[tuple, int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _select(self, prompt: RenderedPrompt, request) -> tuple[Any, Any]:
        bindings = dict(request.bindings)
        for idx, rule in enumerate(self.rules):
            if not _template_ok(rule.get("template", "*"), request.template_id):
                continue
            when = rule.get("when", {})
            if all(_predicate_ok(p, prompt.text if k == "PROMPT" else bindings.get(k)) for k, p in when.items()):
                return idx, rule["responses"] if "responses" in rule else [rule["response"]]
        for key in (request.template_id, request.template_id.split("_")[0], "*"):
            if key in self.defaults:
                val = self.defaults[key]
                return f"default:{key}", val if isinstance(val, list) else [val]
        raise BackendError(f"mock script has no response for template {request.template_id!r}")

    def complete(self, prompt: RenderedPrompt, request) -> Any:
        rule_id, responses = self._select(prompt, request)
        with self._lock:
            self.calls += 1
            # counters are per (rule, template, bindings) so parallel runs stay
            # deterministic and a repair re-query advances the sequence
            k = (rule_id, request.template_id, request.bindings)
            n = self._seen[k]
            self._seen[k] = n + 1
        entry = responses[min(n, len(responses) - 1)]
        if isinstance(entry, dict):
            if "error" in entry:
                raise BackendError(str(entry["error"]), transient=entry.get("transient", True))
            if "payload" in entry:
                return entry["payload"]
            if "echo" in entry:
                return dict(request.bindings).get(entry["echo"], "")
            raise ValueError(f"bad mock response entry {entry!r}")
        return entry


class EchoBackend:
    """Returns one binding verbatim (``SOURCE`` by default)."""

    def __init__(self, field: str = "SOURCE", model_id: str = "echo"):
        self.field = field
        self.model_id = model_id
        self.calls = 0

    def complete(self, prompt: RenderedPrompt, request) -> Any:
        self.calls += 1
        return dict(request.bindings).get(self.field, "")


class HttpChatBackend:
    """OpenAI-style chat-completions endpoint.

    The bearer token is read from ``api_key_env`` at call time.
    """

    def __init__(self, url: str, model_id: str, api_key_env: str = DEFAULT_API_KEY_ENV, timeout: float = 120.0,
                 seed: int = 0):
        self.url = url
        self.seed = seed
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.calls = 0

    def complete(self, prompt: RenderedPrompt, request) -> Any:
        import httpx

        self.calls += 1
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.model_id,
            "messages": prompt.messages(),
            "temperature": 0.0 if request.decode.deterministic else 1.0,
            "max_tokens": request.decode.max_tokens,
        }
        if request.decode.deterministic:
            body["top_p"] = 1.0
            body["seed"] = self.seed
        try:
            resp = httpx.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except httpx.TransportError as exc:
            raise BackendError(f"transport error: {exc}", transient=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code}", transient=True)
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            return resp.text if not resp.text.strip() else {"unparsed_body": resp.text[:500]}


def backend_from_spec(spec: str, model_id: Optional[str] = None) -> JudgeBackend:
    """``mock:<script.json>``, ``echo`` (or ``echo:<BINDING>``), or ``remote:<model>@<url>``."""
    if spec.startswith("mock:"):
        arg = spec[5:]
        if arg == "echo":
            return EchoBackend()
        return MockBackend.from_file(arg) if not model_id else MockBackend(json.loads(Path(arg).read_text("utf-8")), model_id)
    if spec == "echo" or spec.startswith("echo:"):
        return EchoBackend(spec[5:] or "SOURCE") if ":" in spec else EchoBackend()
    if spec.startswith("remote:"):
        model, sep, url = spec[7:].partition("@")
        if not sep or not model or not url:
            raise ValueError(f"remote backend spec must be remote:<model>@<url>, got {spec!r}")
        return HttpChatBackend(url, model_id or model)
    raise ValueError(f"unknown backend spec {spec!r}")
