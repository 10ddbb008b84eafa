"""Benchmark construction: candidate extraction from raw bilingual text,
taxonomy labelling and corpus assembly.

Two raw input layouts are read:

* ``tsv`` -- one ``source<TAB>target`` pair per line;
* ``interleaved`` -- blocks separated by blank lines, each block a
  source line followed by a target line.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .corpus import Corpus, CorpusError, CulturalCategory, Domain, Instance
from .judge.parsing import ParseError, parse_json_payload, parse_text

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_CHARS = 2000


class MiningError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    src: str
    tgt: str
    focus_term: str
    origin: str = ""

    def __post_init__(self) -> None:
        if not self.focus_term or self.focus_term not in self.src:
            raise MiningError(f"focus_term {self.focus_term!r} does not occur in src")

    def to_dict(self) -> dict[str, str]:
        return {"src": self.src, "tgt": self.tgt, "focus_term": self.focus_term, "origin": self.origin}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Candidate":
        return cls(d["src"], d["tgt"], d["focus_term"], d.get("origin", ""))


def read_bilingual(path: str | Path, layout: str = "tsv") -> list[tuple[str, str]]:
    text = Path(path).read_text(encoding="utf-8")
    pairs: list[tuple[str, str]] = []
    if layout == "tsv":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MiningError(f"{path}:{lineno}: expected source<TAB>target")
            pairs.append((parts[0].strip(), parts[1].strip()))
    elif layout == "interleaved":
        for n, block in enumerate(text.replace("\r\n", "\n").split("\n\n"), start=1):
            lines = [ln.strip() for ln in block.strip().split("\n") if ln.strip()]
            if not lines:
                continue
            if len(lines) != 2:
                raise MiningError(f"{path}: block {n} has {len(lines)} lines, expected 2")
            pairs.append((lines[0], lines[1]))
    else:
        raise MiningError(f"unknown layout {layout!r}")
    return pairs


def chunk_pairs(pairs: Sequence[tuple[str, str]], max_chars: int = DEFAULT_CHUNK_CHARS) -> list[tuple[int, str]]:
    """Group pairs into text chunks on pair boundaries; returns ``(first_pair_offset, text)``."""
    chunks: list[tuple[int, str]] = []
    buf: list[str] = []
    size, start = 0, 0
    for i, (src, tgt) in enumerate(pairs):
        para = f"{src}\n{tgt}"
        if buf and size + len(para) + 2 > max_chars:
            chunks.append((start, "\n\n".join(buf)))
            buf, size, start = [], 0, i
        buf.append(para)
        size += len(para) + 2
    if buf:
        chunks.append((start, "\n\n".join(buf)))
    return chunks


@dataclass
class ExtractionStats:
    returned: int = 0
    kept: int = 0
    dropped_invariant: int = 0
    dropped_malformed: int = 0


def extract_candidates(raw_chunk: str, judge, origin: str = "", max_chars: int = DEFAULT_CHUNK_CHARS,
                       stats: Optional[ExtractionStats] = None) -> list[Candidate]:
    if len(raw_chunk) > max_chars:
        raise MiningError(f"chunk of {len(raw_chunk)} chars exceeds the {max_chars}-char bound")
    entries, _ = judge.ask("mining", {"RAW_TEXT_CHUNK": raw_chunk}, lambda r: parse_json_payload(r, list))
    stats = stats if stats is not None else ExtractionStats()
    out = []
    for k, e in enumerate(entries):
        stats.returned += 1
        if not isinstance(e, dict) or not all(isinstance(e.get(f), str) for f in ("src", "tgt", "focus_term")):
            logger.warning("%s#%d: malformed entry dropped: %r", origin, k, e)
            stats.dropped_malformed += 1
            continue
        try:
            out.append(Candidate(e["src"].strip(), e["tgt"].strip(), e["focus_term"].strip(), f"{origin}#{k}"))
        except MiningError as exc:
            logger.warning("%s#%d: dropped: %s", origin, k, exc)
            stats.dropped_invariant += 1
            continue
        stats.kept += 1
    return out


def _parse_taxonomy(raw: str) -> tuple[CulturalCategory, str]:
    obj = parse_json_payload(raw, dict)
    cat = obj.get("category")
    if not isinstance(cat, str):
        raise ParseError("taxonomy answer lacks a 'category' string")
    try:
        category = CulturalCategory.parse(cat)
    except CorpusError:
        raise ParseError(f"unknown category {cat!r}") from None
    reason = obj.get("reason", "")
    return category, reason if isinstance(reason, str) else json.dumps(reason)


def classify_candidate(candidate: Candidate, judge) -> tuple[CulturalCategory, str]:
    result, _ = judge.ask("taxonomy", {"SOURCE_SENTENCE": candidate.src, "FOCUS_TERM": candidate.focus_term},
                          _parse_taxonomy)
    return result


def build_corpus(labeled: Sequence[tuple[Candidate, CulturalCategory]], explication_source: str = "manual_file",
                 sidecar: Optional[Mapping[str, Mapping[str, str]]] = None, judge=None, id_prefix: str = "m",
                 domain: Domain = Domain.LITERARY, name: str = "mined") -> Corpus:
    """Assemble instances in input order.

    ``sidecar`` maps focus term to ``{"explication", "standard_equivalent"?,
    "target_term"?}``.  The reference span is the first occurrence of
    ``target_term`` in the target sentence, or null when absent.
    """
    if explication_source not in ("manual_file", "judge"):
        raise MiningError(f"unknown explication source {explication_source!r}")
    if explication_source == "judge" and judge is None:
        raise MiningError("judge explications requested without a judge")
    sidecar = sidecar or {}
    instances = []
    for k, (cand, category) in enumerate(labeled, start=1):
        entry = dict(sidecar.get(cand.focus_term, {}))
        metadata: dict[str, Any] = {"origin": cand.origin} if cand.origin else {}
        if explication_source == "manual_file":
            if not entry.get("explication"):
                raise MiningError(f"no explication for term {cand.focus_term!r} in the sidecar")
            explication = entry["explication"]
        elif entry.get("explication"):
            explication = entry["explication"]
        else:
            explication, _ = judge.ask("explicate", {"SOURCE_SENTENCE": cand.src, "FOCUS_TERM": cand.focus_term},
                                       parse_text)
            metadata["explication_source"] = "machine"
        s = cand.src.find(cand.focus_term)
        if cand.src.count(cand.focus_term) > 1:
            logger.info("%s%d: %r occurs %d times; first occurrence used", id_prefix, k, cand.focus_term,
                        cand.src.count(cand.focus_term))
            metadata["span_tie"] = "first_occurrence"
        ref_span = None
        target_term = entry.get("target_term")
        if target_term and target_term in cand.tgt:
            r = cand.tgt.find(target_term)
            ref_span = (r, r + len(target_term))
        inst = Instance(
            id=f"{id_prefix}{k}",
            source_text=cand.src,
            reference_text=cand.tgt,
            source_span=(s, s + len(cand.focus_term)),
            reference_span=ref_span,
            category=category,
            explication=explication,
            standard_equivalent=entry.get("standard_equivalent"),
            domain=domain,
            metadata=metadata,
        )
        inst.validate()
        instances.append(inst)
    return Corpus(tuple(instances), name=name)


def dedupe(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Drop exact (src, tgt, focus_term) repeats, keeping the first."""
    seen, out = set(), []
    for c in candidates:
        key = (c.src, c.tgt, c.focus_term)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def category_counts(labeled: Sequence[tuple[Candidate, CulturalCategory]]) -> dict[str, int]:
    return dict(Counter(c.value for _, c in labeled))
