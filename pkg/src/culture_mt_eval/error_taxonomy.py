"""Seven cultural error categories, the primary-label rule and error distributions.

The empty label set means the culture-loaded span was rendered correctly;
there is no "Correct" category.  Labels produced by a judge are an
annotation aid with the same file schema as human annotations.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

from .judge.parsing import ParseError


class ErrorCategory(enum.Enum):
    # value = priority, 1 is the most fundamental failure
    OMISSION = 1
    LITERALIZATION = 2
    SENSE_ERROR = 3
    NEUTRALIZATION = 4
    MIS_SUBSTITUTION = 5
    PRAGMATIC_SHIFT = 6
    OVER_INTERPRETATION = 7

    @property
    def priority(self) -> int:
        return self.value

    @property
    def label(self) -> str:
        return _NAMES[self]

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str) -> "ErrorCategory":
        """Case-, space- and hyphen-insensitive: ``"Sense Error"``, ``"over-interpretation"``."""
        key = re.sub(r"[^a-z]", "", text.lower())
        try:
            return _BY_KEY[key]
        except KeyError:
            raise ValueError(f"unknown error category {text!r}") from None


_NAMES = {
    ErrorCategory.OMISSION: "Omission",
    ErrorCategory.LITERALIZATION: "Literalization",
    ErrorCategory.SENSE_ERROR: "SenseError",
    ErrorCategory.NEUTRALIZATION: "Neutralization",
    ErrorCategory.MIS_SUBSTITUTION: "MisSubstitution",
    ErrorCategory.PRAGMATIC_SHIFT: "PragmaticShift",
    ErrorCategory.OVER_INTERPRETATION: "OverInterpretation",
}
_BY_KEY = {name.lower(): cat for cat, name in _NAMES.items()}


def assign_primary(labels: Iterable[ErrorCategory]) -> Optional[ErrorCategory]:
    labels = set(labels)
    if not labels:
        return None
    return min(labels, key=lambda c: c.priority)


@dataclass(frozen=True)
class ErrorAnnotation:
    instance_id: str
    system_id: str
    labels: frozenset[ErrorCategory]
    source: str = "human"

    @property
    def primary(self) -> Optional[ErrorCategory]:
        return assign_primary(self.labels)

    @property
    def correct(self) -> bool:
        return not self.labels

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "system_id": self.system_id,
            "labels": [c.label for c in sorted(self.labels, key=lambda c: c.priority)],
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorAnnotation":
        source = d.get("source", "human")
        if source not in ("human", "judge"):
            raise ValueError(f"{d.get('instance_id')}: source must be 'human' or 'judge', got {source!r}")
        return cls(str(d["instance_id"]), str(d["system_id"]),
                   frozenset(ErrorCategory.parse(x) for x in d.get("labels", [])), source)


def load_annotations(path) -> list[ErrorAnnotation]:
    from .reporting import read_jsonl

    return [ErrorAnnotation.from_dict(r) for r in read_jsonl(path)]


@dataclass
class SystemErrorProfile:
    system_id: str
    n: int
    n_correct: int
    correctness_rate: float
    # primary-label share among incorrect samples; empty when every sample is correct
    shares: dict[str, float]
    counts: dict[str, int]


def error_distribution(annotations: Sequence[ErrorAnnotation], by_system: bool = True,
                       known_systems: Optional[Iterable[str]] = None) -> dict[str, SystemErrorProfile]:
    if known_systems is not None:
        known = set(known_systems)
        unknown = sorted({a.system_id for a in annotations} - known)
        if unknown:
            raise ValueError(f"annotations reference unknown system id(s): {', '.join(unknown)}")
    groups: dict[str, list[ErrorAnnotation]] = {}
    for a in annotations:
        groups.setdefault(a.system_id if by_system else "ALL", []).append(a)
    out = {}
    for sid in sorted(groups):
        rows = groups[sid]
        counts = {c.label: 0 for c in ErrorCategory}
        for a in rows:
            if a.primary is not None:
                counts[a.primary.label] += 1
        n_wrong = sum(counts.values())
        shares = {k: v / n_wrong for k, v in counts.items()} if n_wrong else {}
        out[sid] = SystemErrorProfile(sid, len(rows), len(rows) - n_wrong, (len(rows) - n_wrong) / len(rows),
                                      shares, counts if n_wrong else {})
    return out


def distribution_table(profiles: dict[str, SystemErrorProfile]) -> str:
    from .reporting import format_table

    cats = [c.label for c in ErrorCategory]
    rows = []
    for p in profiles.values():
        rows.append([p.system_id, str(p.n), f"{p.correctness_rate:.3f}"]
                    + [f"{p.shares[c]:.3f}" if p.shares else "-" for c in cats])
    return format_table(["System", "N", "Correct"] + cats, rows)


def parse_error_labels(raw_response: str) -> frozenset[ErrorCategory]:
    """``Labels: Omission, Neutralization`` / ``Labels: NONE``; a bare list is accepted too."""
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    lines = re.findall(r"^[\s*]*labels?[\s*]*:(.*)$", raw_response, re.IGNORECASE | re.MULTILINE)
    value = lines[-1] if lines else raw_response
    value = value.strip().strip("*").strip()
    if not value:
        raise ParseError("no labels given")
    if value.strip(".").upper() == "NONE":
        return frozenset()
    labels = set()
    for part in re.split(r"[,;\n]", value):
        part = part.strip().strip(".[]*\"'")
        if not part:
            continue
        try:
            labels.add(ErrorCategory.parse(part))
        except ValueError:
            raise ParseError(f"unknown error label {part!r}") from None
    if not labels:
        raise ParseError("no labels given")
    return frozenset(labels)


def classify_errors(instance, hypothesis: str, judge) -> frozenset[ErrorCategory]:
    """Judge-assisted labelling; an automation aid, never ground truth."""
    bindings = {
        "SOURCE": instance.source_text,
        "TERM": instance.source_term,
        "EXPLICATION": instance.explication,
        "REFERENCE": instance.reference_text,
        "HYPOTHESIS": hypothesis,
    }
    labels, _ = judge.ask("error_classify", bindings, parse_error_labels)
    return labels

