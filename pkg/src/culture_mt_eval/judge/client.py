from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from .backends import BackendError, JudgeBackend
from .parsing import ParseError
from .templates import RenderedPrompt, format_reminder, load_template, render_prompt

logger = logging.getLogger(__name__)


class MalformedPayloadError(RuntimeError):
    pass


class RetriesExhausted(RuntimeError):
    pass


class JudgeFailure(RuntimeError):
    """A judged step failed for good: backend errors or unparseable twice."""

    def __init__(self, message: str, transcripts: list["JudgeTranscript"] | None = None):
        super().__init__(message)
        self.transcripts = transcripts or []


@dataclass(frozen=True)
class DecodeConfig:
    deterministic: bool = True
    max_tokens: int = 1024


@dataclass(frozen=True)
class JudgeRequest:
    template_id: str
    bindings: tuple[tuple[str, str], ...]
    model_id: str
    decode: DecodeConfig = DecodeConfig()
    reminder: str = ""

    @classmethod
    def make(cls, template_id: str, bindings: Mapping[str, str], model_id: str,
             decode: DecodeConfig = DecodeConfig(), reminder: str = "") -> "JudgeRequest":
        if not decode.deterministic:
            raise ValueError("judge requests must use deterministic decoding")
        return cls(template_id, tuple(sorted((k, str(v)) for k, v in bindings.items())), model_id, decode, reminder)

    @property
    def cache_key(self) -> str:
        payload = {
            "template_id": self.template_id,
            "bindings": {k: v.strip() for k, v in self.bindings},
            "model_id": self.model_id,
        }
        if self.reminder:
            payload["reminder"] = self.reminder
        blob = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class JudgeTranscript:
    request: JudgeRequest
    rendered_prompt: str
    raw_response: Optional[str]
    cache_key: str
    latency_ms: float = 0.0
    retries: int = 0
    cached: bool = False
    parsed: Any = None
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "cache_key": self.cache_key,
            "template_id": self.request.template_id,
            "model_id": self.request.model_id,
            "bindings": dict(self.request.bindings),
            "reminder": self.request.reminder,
            "rendered_prompt": self.rendered_prompt,
            "raw_response": self.raw_response,
            "parsed": _jsonable(self.parsed),
            "error": self.error,
            "retries": self.retries,
            "cached": self.cached,
            "latency_ms": round(self.latency_ms, 3),
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (frozenset, set)):
        return sorted(str(v) for v in value)
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    return value


class ResponseCache:
    """Content-addressed response store.

    With ``directory`` set, entries are files ``<dir>/<k[:2]>/<k>.json``
    written atomically; otherwise the cache is in memory.  A per-key lock
    gives read-your-writes: a second caller of the same key waits for the
    first one's backend call instead of issuing its own.
    """

    def __init__(self, directory: Optional[str | Path] = None, enabled: bool = True):
        self.directory = Path(directory) if directory else None
        self.enabled = enabled
        self._mem: dict[str, dict] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        if not self.enabled:
            return None
        if key in self._mem:
            return self._mem[key]
        if self.directory is not None:
            p = self._path(key)
            if p.exists():
                rec = json.loads(p.read_text(encoding="utf-8"))
                self._mem[key] = rec
                return rec
        return None

    def put(self, key: str, record: dict) -> None:
        if not self.enabled:
            return
        self._mem[key] = record
        if self.directory is not None:
            p = self._path(key)
            p.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, p)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0
    sleep: Callable[[float], None] = field(default=time.sleep, compare=False)

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * (2 ** attempt))


def build_prompt(request: JudgeRequest, assets: Optional[str | Path] = None) -> RenderedPrompt:
    prompt = render_prompt(load_template(request.template_id, assets), dict(request.bindings))
    if request.reminder:
        prompt = RenderedPrompt(prompt.template_id, prompt.system, f"{prompt.user}\n\n{request.reminder}")
    return prompt


def query_judge(request: JudgeRequest, backend: JudgeBackend, cache: Optional[ResponseCache] = None,
                retry: RetryPolicy = RetryPolicy(), assets: Optional[str | Path] = None) -> JudgeTranscript:
    """Render, then answer from cache or the backend (with bounded exponential backoff)."""
    prompt = build_prompt(request, assets)
    key = request.cache_key
    cache = cache if cache is not None else ResponseCache(enabled=False)
    with cache.lock(key):
        hit = cache.get(key)
        if hit is not None:
            return JudgeTranscript(request, prompt.text, hit["raw_response"], key, latency_ms=0.0, cached=True)
        attempt = 0
        start = time.perf_counter()
        while True:
            try:
                raw = backend.complete(prompt, request)
                break
            except BackendError as exc:
                if not exc.transient or attempt >= retry.max_retries:
                    raise RetriesExhausted(
                        f"{request.template_id}: backend failed after {attempt} retries: {exc}"
                    ) from exc
                logger.info("%s: transient backend error (%s); retry %d", request.template_id, exc, attempt + 1)
                retry.sleep(retry.delay(attempt))
                attempt += 1
        latency = (time.perf_counter() - start) * 1000.0
        if not isinstance(raw, str):
            raise MalformedPayloadError(f"{request.template_id}: backend returned {type(raw).__name__}, not text")
        cache.put(key, {"raw_response": raw, "template_id": request.template_id, "model_id": request.model_id})
        return JudgeTranscript(request, prompt.text, raw, key, latency_ms=latency, retries=attempt)


class JudgeClient:
    """Backend + cache + retry policy, with the parse/repair loop every agent uses.

    Transcripts of every exchange are collected in ``transcripts``.
    """

    def __init__(self, backend: JudgeBackend, cache: Optional[ResponseCache] = None,
                 retry: RetryPolicy = RetryPolicy(), decode: DecodeConfig = DecodeConfig(),
                 assets: Optional[str | Path] = None, model_id: Optional[str] = None):
        self.backend = backend
        self.cache = cache if cache is not None else ResponseCache()
        self.retry = retry
        self.decode = decode
        self.assets = assets
        self.model_id = model_id or getattr(backend, "model_id", "unknown")
        self.transcripts: list[JudgeTranscript] = []
        self._tlock = threading.Lock()

    def _record(self, t: JudgeTranscript) -> None:
        with self._tlock:
            self.transcripts.append(t)

    def ask(self, template_id: str, bindings: Mapping[str, str], parser: Callable[[str], Any]) -> tuple[Any, JudgeTranscript]:
        """Query and parse; one re-query with a format reminder on a parse failure."""
        seen: list[JudgeTranscript] = []
        for reminder in ("", format_reminder(template_id)):
            request = JudgeRequest.make(template_id, bindings, self.model_id, self.decode, reminder)
            try:
                t = query_judge(request, self.backend, self.cache, self.retry, self.assets)
            except (RetriesExhausted, MalformedPayloadError) as exc:
                failed = JudgeTranscript(request, "", None, request.cache_key, error=str(exc))
                self._record(failed)
                raise JudgeFailure(str(exc), seen + [failed]) from exc
            try:
                t.parsed = parser(t.raw_response)
            except ParseError as exc:
                t.error = f"unparseable: {exc}"
                self._record(t)
                seen.append(t)
                logger.info("%s: unparseable response (%s)%s", template_id, exc, "" if reminder else "; re-querying")
                continue
            self._record(t)
            return t.parsed, t
        raise JudgeFailure(f"{template_id}: unparseable after repair: {seen[-1].error}", seen)


def judge_filter(judge: JudgeClient, instance) -> Optional[str]:
    from .parsing import parse_filter_verdict

    bindings = {
        "SOURCE": instance.source_text,
        "TERM": instance.source_term,
        "REFERENCE": instance.reference_text,
        "EXPLICATION": instance.explication,
    }
    reason, _ = judge.ask("filter", bindings, parse_filter_verdict)
    return reason
