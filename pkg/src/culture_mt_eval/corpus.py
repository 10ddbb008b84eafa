"""Benchmark instances: data model, JSON-Lines ingestion, filtering and statistics.

Spans are ``[start, end)`` offsets counted in Unicode code points, so
``source_text[start:end]`` is the culture-loaded term in Python directly.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

logger = logging.getLogger(__name__)

HEADER_KEY = "__corpus__"


class CorpusError(ValueError):
    """Raised for malformed corpus files or instances that break an invariant."""


class CulturalCategory(str, enum.Enum):
    MATERIAL = "Material"
    SOCIAL = "Social"
    LINGUISTIC = "Linguistic"
    RELIGIOUS = "Religious"
    ECOLOGICAL = "Ecological"

    @classmethod
    def parse(cls, value: str) -> "CulturalCategory":
        """Accept ``"Social"``, ``"social"`` or ``"Social Culture"``."""
        key = value.strip().lower()
        if key.endswith(" culture"):
            key = key[: -len(" culture")].strip()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise CorpusError(f"unknown category {value!r}")


class Domain(str, enum.Enum):
    LITERARY = "literary"
    INSTITUTIONAL = "institutional"


Span = tuple[int, int]


@dataclass(frozen=True)
class Instance:
    id: str
    source_text: str
    reference_text: str
    source_span: Span
    reference_span: Optional[Span]
    category: CulturalCategory
    explication: str
    standard_equivalent: Optional[str] = None
    domain: Domain = Domain.LITERARY
    extra_spans: tuple[Span, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def source_term(self) -> str:
        s, e = self.source_span
        return self.source_text[s:e]

    @property
    def reference_term(self) -> Optional[str]:
        if self.reference_span is None:
            return None
        s, e = self.reference_span
        return self.reference_text[s:e]

    @property
    def context_length(self) -> int:
        # characters of the source sentence outside the cultural span
        s, e = self.source_span
        return len(self.source_text) - (e - s)

    def source_with_brackets(self) -> str:
        s, e = self.source_span
        return f"{self.source_text[:s]}[{self.source_text[s:e]}]{self.source_text[e:]}"

    def validate(self) -> None:
        if not self.id:
            raise CorpusError("instance id must be non-empty")
        if not self.reference_text:
            raise CorpusError(f"{self.id}: reference_text is empty")
        if not self.explication or not self.explication.strip():
            raise CorpusError(f"{self.id}: explication is empty")
        _check_span(self.id, "source_span", self.source_span, self.source_text)
        if self.reference_span is not None:
            _check_span(self.id, "reference_span", self.reference_span, self.reference_text)
        for sp in self.extra_spans:
            _check_span(self.id, "extra_spans", sp, self.source_text)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "source_text": self.source_text,
            "reference_text": self.reference_text,
            "source_span": list(self.source_span),
            "reference_span": list(self.reference_span) if self.reference_span else None,
            "category": self.category.value,
            "explication": self.explication,
            "standard_equivalent": self.standard_equivalent,
            "domain": self.domain.value,
        }
        if self.extra_spans:
            d["extra_spans"] = [list(sp) for sp in self.extra_spans]
        if self.metadata:
            d["metadata"] = self.metadata
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Instance":
        missing = [k for k in ("id", "source_text", "reference_text", "source_span", "category", "explication") if k not in d]
        if missing:
            raise CorpusError(f"missing field(s): {', '.join(missing)}")
        try:
            domain = Domain(d.get("domain") or "literary")
        except ValueError:
            raise CorpusError(f"{d['id']}: unknown domain {d.get('domain')!r}") from None
        ref_span = d.get("reference_span")
        inst = cls(
            id=str(d["id"]),
            source_text=d["source_text"],
            reference_text=d["reference_text"],
            source_span=_as_span(d["id"], "source_span", d["source_span"]),
            reference_span=None if ref_span is None else _as_span(d["id"], "reference_span", ref_span),
            category=CulturalCategory.parse(d["category"]),
            explication=d["explication"],
            standard_equivalent=d.get("standard_equivalent"),
            domain=domain,
            extra_spans=tuple(_as_span(d["id"], "extra_spans", sp) for sp in d.get("extra_spans", ())),
            metadata=dict(d.get("metadata") or {}),
        )
        inst.validate()
        return inst


def _as_span(iid: str, name: str, value: Any) -> Span:
    if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(isinstance(v, int) for v in value):
        raise CorpusError(f"{iid}: {name} must be a [start, end] pair of integers, got {value!r}")
    return (value[0], value[1])


def _check_span(iid: str, name: str, span: Span, text: str) -> None:
    start, end = span
    if not 0 <= start < end:
        raise CorpusError(f"{iid}: {name} {list(span)} is empty or negative")
    if end > len(text):
        raise CorpusError(f"{iid}: {name} end {end} exceeds text length {len(text)}")


@dataclass(frozen=True)
class Corpus:
    instances: tuple[Instance, ...]
    name: str = "corpus"
    language_pair: str = "zh-en"
    version: str = "1"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for inst in self.instances:
            if inst.id in seen:
                raise CorpusError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances)

    def __getitem__(self, iid: str) -> Instance:
        for inst in self.instances:
            if inst.id == iid:
                return inst
        raise KeyError(iid)

    @property
    def ids(self) -> list[str]:
        return [i.id for i in self.instances]

    def subset(self, ids: Iterable[str]) -> "Corpus":
        keep = set(ids)
        return replace(self, instances=tuple(i for i in self.instances if i.id in keep))


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSON-Lines corpus. Blank lines are skipped; an optional first
    line ``{"__corpus__": {...}}`` carries name/language_pair/version."""
    meta: dict[str, Any] = {}
    instances: list[Instance] = []
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            if HEADER_KEY in obj:
                if instances or meta:
                    raise CorpusError(f"{path}:{lineno}: corpus header must be the first line")
                meta = dict(obj[HEADER_KEY])
                continue
            try:
                inst = Instance.from_dict(obj)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if inst.id in first_line:
                raise CorpusError(
                    f"{path}: duplicate id {inst.id!r} on lines {first_line[inst.id]} and {lineno}"
                )
            first_line[inst.id] = lineno
            instances.append(inst)
    return Corpus(
        instances=tuple(instances),
        name=meta.get("name", Path(path).stem),
        language_pair=meta.get("language_pair", "zh-en"),
        version=str(meta.get("version", "1")),
    )


def dump_corpus(corpus: Corpus, path: str | Path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            meta = {"name": corpus.name, "language_pair": corpus.language_pair, "version": corpus.version}
            fh.write(json.dumps({HEADER_KEY: meta}, ensure_ascii=False) + "\n")
        for inst in corpus:
            fh.write(json.dumps(inst.to_dict(), ensure_ascii=False) + "\n")


# --- statistics ----------------------------------------------------------


@dataclass
class CategoryStats:
    category: str
    count: int
    ratio: float
    avg_source_term_len: Optional[float]
    avg_target_term_len: Optional[float]
    avg_context_len: Optional[float]


@dataclass
class CorpusStats:
    rows: list[CategoryStats]
    total: CategoryStats

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [vars(r) for r in self.rows],
            "total": vars(self.total),
        }

    def table(self) -> str:
        from .reporting import format_table

        def f(v: Optional[float], nd: int = 2) -> str:
            return "-" if v is None else f"{v:.{nd}f}"

        header = ["Category", "Count", "Ratio (%)", "Term Len Src", "Term Len Tgt", "Context Src"]
        body = [
            [r.category, str(r.count), f(r.ratio, 1), f(r.avg_source_term_len), f(r.avg_target_term_len), f(r.avg_context_len)]
            for r in self.rows + [self.total]
        ]
        return format_table(header, body)


def _mean(xs: list[int]) -> Optional[float]:
    return sum(xs) / len(xs) if xs else None


def _stats_row(name: str, insts: list[Instance], total: int) -> CategoryStats:
    tgt = [len(i.reference_term) for i in insts if i.reference_span is not None]
    return CategoryStats(
        category=name,
        count=len(insts),
        ratio=round(100.0 * len(insts) / total, 1),
        avg_source_term_len=_mean([len(i.source_term) for i in insts]),
        avg_target_term_len=_mean(tgt),
        avg_context_len=_mean([i.context_length for i in insts]),
    )


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Per-category counts, ratios and average lengths in characters.

    Rows are ordered by count (descending), ties broken by category
    declaration order.  Categories absent from the corpus are still
    listed with count 0 and no averages.
    """
    if len(corpus) == 0:
        raise CorpusError("cannot compute statistics of an empty corpus")
    total = len(corpus)
    by_cat: dict[CulturalCategory, list[Instance]] = {c: [] for c in CulturalCategory}
    for inst in corpus:
        by_cat[inst.category].append(inst)
    order = list(CulturalCategory)
    cats = sorted(order, key=lambda c: (-len(by_cat[c]), order.index(c)))
    rows = [_stats_row(c.value, by_cat[c], total) for c in cats]
    return CorpusStats(rows=rows, total=_stats_row("Total", list(corpus), total))


# --- filtering -----------------------------------------------------------

REJECT_REASONS = (
    "insufficient_cultural_salience",
    "weak_contextual_support",
    "semantic_misalignment",
)


@dataclass(frozen=True)
class FilterConfig:
    """Which quality-control rules to apply.

    ``alignment`` and ``contextual_support`` have deterministic checks.
    Salience has none; it only takes effect through the judge.
    """

    salience: bool = False
    contextual_support: bool = False
    alignment: bool = False
    min_context_chars: int = 4
    use_judge: bool = False

    @property
    def enabled(self) -> tuple[str, ...]:
        flags = (self.salience, self.contextual_support, self.alignment)
        return tuple(r for r, on in zip(REJECT_REASONS, flags) if on)


def _rule_reason(inst: Instance, rules: FilterConfig) -> Optional[str]:
    if rules.alignment and inst.reference_span is None:
        return "semantic_misalignment"
    if rules.contextual_support and inst.context_length < rules.min_context_chars:
        return "weak_contextual_support"
    return None


def filter_instances(corpus: Corpus, rules: FilterConfig, judge=None) -> tuple[Corpus, list[tuple[str, str]]]:
    enabled = rules.enabled
    if rules.use_judge and enabled and judge is None:
        raise CorpusError("judge-backed filtering requested but no judge configured")
    kept: list[Instance] = []
    rejected: list[tuple[str, str]] = []
    for inst in corpus:
        reason = _rule_reason(inst, rules)
        if reason is None and rules.use_judge and enabled:
            from .judge.client import judge_filter

            reason = judge_filter(judge, inst)
            if reason is not None and reason not in enabled:
                logger.info("%s: judge reason %s is not an enabled rule; kept", inst.id, reason)
                reason = None
        if reason is None:
            kept.append(inst)
        else:
            logger.info("rejected %s: %s", inst.id, reason)
            rejected.append((inst.id, reason))
    return replace(corpus, instances=tuple(kept)), rejected
