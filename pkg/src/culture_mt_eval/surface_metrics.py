"""Overlap baselines (sentence/corpus BLEU, ChrF++), span realization checks
and the boundary to externally hosted learned metrics.

Tokenization is deliberately simple and frozen: every CJK ideograph is its
own token, other runs of word characters form one token, and every
punctuation character is a separate token.  Whitespace is discarded.
"""
from __future__ import annotations

import json
import logging
import math
import re
import shlex
import subprocess
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

_CJK = "\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff"
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+|[^\w\s]")

SMOOTHING = ("none", "add_one")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class MetricScore:
    metric_id: str
    value: float
    granularity: str = "sentence"

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 100.0:
            raise ValueError(f"{self.metric_id} score {self.value} outside [0, 100]")


def _ngrams(items: Sequence[str], n: int) -> Counter:
    return Counter(tuple(items[i : i + n]) for i in range(len(items) - n + 1))


def _bleu_stats(hyp: list[str], refs: list[list[str]], max_n: int) -> tuple[list[int], list[int], int, int]:
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for g, c in _ngrams(ref, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    c = len(hyp)
    # closest reference length, shorter one on ties
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    return matches, totals, c, r


def _brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def bleu(hypothesis: str, references: str | Sequence[str], max_n: int = 4, smoothing: str = "add_one") -> MetricScore:
    """Sentence-level BLEU on a 0-100 scale.

    Only n-gram orders the hypothesis actually has (``min(max_n, len)``)
    enter the geometric mean, so a one-token hypothesis is not zeroed
    by empty higher orders.  ``add_one`` smoothing applies to orders
    n > 1; the unigram precision is never smoothed.
    """
    if smoothing not in SMOOTHING:
        raise ValueError(f"unknown smoothing {smoothing!r}; expected one of {SMOOTHING}")
    refs = [references] if isinstance(references, str) else list(references)
    if not refs:
        raise ValueError("bleu needs at least one reference")
    hyp = tokenize(hypothesis)
    if not hyp:
        logger.warning("empty hypothesis scored as BLEU 0")
        return MetricScore("bleu", 0.0)
    matches, totals, c, r = _bleu_stats(hyp, [tokenize(x) for x in refs], max_n)
    order = min(max_n, len(hyp))
    log_sum = 0.0
    for n in range(order):
        m, t = matches[n], totals[n]
        if smoothing == "add_one" and n > 0:
            m, t = m + 1, t + 1
        if m == 0:
            return MetricScore("bleu", 0.0)
        log_sum += math.log(m / t)
    value = 100.0 * _brevity_penalty(c, r) * math.exp(log_sum / order)
    return MetricScore("bleu", min(value, 100.0))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str | Sequence[str]], max_n: int = 4) -> MetricScore:
    """Standard corpus BLEU: statistics pooled over segments, no smoothing."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if not hypotheses:
        raise ValueError("corpus_bleu needs at least one segment")
    match_sum = [0] * max_n
    total_sum = [0] * max_n
    c_sum = r_sum = 0
    for hyp_text, ref in zip(hypotheses, references):
        refs = [ref] if isinstance(ref, str) else list(ref)
        if not refs:
            raise ValueError("every segment needs at least one reference")
        m, t, c, r = _bleu_stats(tokenize(hyp_text), [tokenize(x) for x in refs], max_n)
        for n in range(max_n):
            match_sum[n] += m[n]
            total_sum[n] += t[n]
        c_sum += c
        r_sum += r
    if any(m == 0 for m in match_sum):
        return MetricScore("bleu", 0.0, "corpus")
    log_sum = sum(math.log(m / t) for m, t in zip(match_sum, total_sum))
    value = 100.0 * _brevity_penalty(c_sum, r_sum) * math.exp(log_sum / max_n)
    return MetricScore("bleu", min(value, 100.0), "corpus")


def _char_seq(text: str) -> list[str]:
    return [ch for ch in text if not ch.isspace()]


def chrf_pp(hypothesis: str, reference: str, char_n: int = 6, word_n: int = 2, beta: float = 2.0) -> MetricScore:
    """ChrF++ on a 0-100 scale.

    Precision and recall are averaged over every order in which either
    side has at least one n-gram (character orders 1..char_n on the
    whitespace-stripped text, word orders 1..word_n on tokens), then
    combined into one F-beta score.
    """
    if not hypothesis.strip() or not reference.strip():
        raise ValueError("chrf_pp needs non-empty hypothesis and reference")
    streams = [(_char_seq(hypothesis), _char_seq(reference), n) for n in range(1, char_n + 1)]
    h_tok, r_tok = tokenize(hypothesis), tokenize(reference)
    streams += [(h_tok, r_tok, n) for n in range(1, word_n + 1)]
    precisions, recalls = [], []
    for hyp, ref, n in streams:
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        h_total, r_total = sum(h.values()), sum(r.values())
        if h_total == 0 and r_total == 0:
            continue
        match = sum((h & r).values())
        precisions.append(match / h_total if h_total else 0.0)
        recalls.append(match / r_total if r_total else 0.0)
    if not precisions:
        return MetricScore("chrf_pp", 0.0)
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    b2 = beta * beta
    denom = b2 * p + r
    value = 0.0 if denom == 0 else (1 + b2) * p * r / denom
    return MetricScore("chrf_pp", min(100.0 * value, 100.0))


# --- span realization ----------------------------------------------------


def normalize_text(text: str) -> str:
    """Casefold, drop punctuation, collapse whitespace."""
    text = unicodedata.normalize("NFKC", text).casefold()
    text = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)
    return " ".join(text.split())


def span_realized(hypothesis: str, instance, mode: str = "exact") -> bool:
    term = instance.reference_term
    if term is None:
        raise ValueError(f"{instance.id}: instance has no reference_span")
    if not hypothesis:
        return False
    if mode == "exact":
        return term in hypothesis
    if mode == "normalized":
        needle = normalize_text(term)
        return bool(needle) and f" {needle} " in f" {normalize_text(hypothesis)} "
    raise ValueError(f"unknown span mode {mode!r}")


def locate_span(hypothesis: str, term: str) -> Optional[tuple[int, int]]:
    """Offsets of ``term`` in ``hypothesis``: exact match first, then case-insensitive."""
    i = hypothesis.find(term)
    if i >= 0:
        return i, i + len(term)
    m = re.search(re.escape(term), hypothesis, re.IGNORECASE)
    return (m.start(), m.end()) if m else None


# --- external scorers ----------------------------------------------------


class ExternalScorerError(RuntimeError):
    pass


@dataclass
class SegmentScore:
    value: Optional[float]
    error: Optional[str] = None


def _coerce_score(raw: object) -> float:
    if isinstance(raw, (bytes, str)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError:
            raise ExternalScorerError(f"non-JSON scorer response: {raw!r:.80}") from None
    if not isinstance(raw, dict) or "score" not in raw:
        raise ExternalScorerError(f"scorer response lacks 'score': {raw!r:.80}")
    score = raw["score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
        raise ExternalScorerError(f"non-numeric score {score!r}")
    return float(score)


class ExternalScorer:
    """Handle for a learned metric served outside this process.

    Wire contract: request ``{"source", "hypothesis", "reference"}``,
    response ``{"score": number}``.  Supported descriptors:

    * ``cmd:<command line>`` -- request JSON on stdin, response on stdout
    * ``http://...`` / ``https://...`` -- JSON POST
    * any Python callable taking the request dict (for in-process stubs)
    """

    def __init__(self, descriptor: str | Callable[[dict], object], name: str = "external",
                 parallelism: int = 4, timeout: float = 60.0):
        self.descriptor = descriptor
        self.name = name
        self.parallelism = max(1, parallelism)
        self.timeout = timeout
        if callable(descriptor):
            self._call = descriptor
        elif descriptor.startswith("cmd:"):
            self._argv = shlex.split(descriptor[4:])
            self._call = self._call_cmd
        elif descriptor.startswith(("http://", "https://")):
            self._call = self._call_http
        else:
            raise ValueError(f"unsupported scorer descriptor {descriptor!r}")

    def _call_cmd(self, request: dict) -> object:
        try:
            proc = subprocess.run(self._argv, input=json.dumps(request, ensure_ascii=False),
                                  capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalScorerError(f"scorer unreachable: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalScorerError(f"scorer exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        return proc.stdout

    def _call_http(self, request: dict) -> object:
        import httpx

        try:
            resp = httpx.post(self.descriptor, json=request, timeout=self.timeout)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ExternalScorerError(f"scorer unreachable: {exc}") from exc
        return resp.text

    def score(self, source: str, hypothesis: str, reference: Optional[str] = None) -> float:
        request = {"source": source, "hypothesis": hypothesis}
        if reference is not None:
            request["reference"] = reference
        try:
            raw = self._call(request)
        except ExternalScorerError:
            raise
        except Exception as exc:  # stub callables may raise anything
            raise ExternalScorerError(f"scorer failed: {exc}") from exc
        return _coerce_score(raw)

    def score_segments(self, segments: Iterable[tuple[str, str, Optional[str]]]) -> list[SegmentScore]:
        def one(seg):
            try:
                return SegmentScore(self.score(*seg))
            except ExternalScorerError as exc:
                logger.warning("%s: %s", self.name, exc)
                return SegmentScore(None, str(exc))

        segs = list(segments)
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(one, segs))


def register_external_scorer(descriptor, name: str = "external", parallelism: int = 4,
                             timeout: float = 60.0) -> ExternalScorer:
    return ExternalScorer(descriptor, name=name, parallelism=parallelism, timeout=timeout)
