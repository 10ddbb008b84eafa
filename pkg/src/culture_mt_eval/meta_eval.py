"""Meta-evaluation: agreement with human judgments and sensitivity to
controlled cultural errors."""
from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional, Protocol, Sequence

from .corpus import Corpus, Instance
from .error_taxonomy import ErrorCategory
from .judge.parsing import parse_text
from .judge.templates import load_text_asset
from .reporting import format_table
from .surface_metrics import bleu, chrf_pp, locate_span

logger = logging.getLogger(__name__)


class CorrelationError(ValueError):
    pass


def _check_pair(xs: Sequence[float], ys: Sequence[float]) -> None:
    if len(xs) != len(ys):
        raise CorrelationError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise CorrelationError("need at least two paired values")
    for name, v in (("xs", xs), ("ys", ys)):
        if len(set(v)) == 1:
            raise CorrelationError(f"{name} has zero variance")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    _check_pair(xs, ys)
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    denom = math.sqrt(sxx * syy) or math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        # distinct values whose spread underflows
        raise CorrelationError("variance underflows to zero")
    r = sxy / denom
    return max(-1.0, min(1.0, r))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the positions they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    _check_pair(xs, ys)
    return pearson(average_ranks(xs), average_ranks(ys))


@dataclass(frozen=True)
class HumanJudgment:
    instance_id: str
    system_id: str
    cultural_correct: bool
    graded: Optional[float] = None

    @property
    def key(self) -> tuple[str, str]:
        return self.instance_id, self.system_id


def load_judgments(path) -> list[HumanJudgment]:
    from .reporting import read_jsonl

    out, seen = [], set()
    for r in read_jsonl(path):
        j = HumanJudgment(str(r["instance_id"]), str(r["system_id"]), bool(r["cultural_correct"]), r.get("graded"))
        if j.key in seen:
            raise CorrelationError(f"duplicate judgment for {j.key}")
        seen.add(j.key)
        out.append(j)
    return out


@dataclass
class CorrelationReport:
    metric_id: str
    pearson_r: float
    spearman_rho: float
    n: int


def correlate_metrics(scores: Mapping[str, Mapping[tuple[str, str], float]],
                      judgments: Sequence[HumanJudgment]) -> list[CorrelationReport]:
    """Segment-level Pearson/Spearman of each metric against binary cultural correctness.

    ``scores[metric][(instance_id, system_id)]`` must cover every judgment.
    """
    missing = {m: [j.key for j in judgments if j.key not in per] for m, per in scores.items()}
    missing = {m: ks for m, ks in missing.items() if ks}
    if missing:
        detail = "; ".join(f"{m}: {', '.join('/'.join(k) for k in ks)}" for m, ks in sorted(missing.items()))
        raise CorrelationError(f"scores missing for judged items ({detail})")
    truth = [1.0 if j.cultural_correct else 0.0 for j in judgments]
    reports = []
    for metric in sorted(scores):
        xs = [float(scores[metric][j.key]) for j in judgments]
        try:
            reports.append(CorrelationReport(metric, pearson(xs, truth), spearman(xs, truth), len(xs)))
        except CorrelationError as exc:
            raise CorrelationError(f"{metric}: {exc}") from None
    return reports


def correlation_table(reports: Sequence[CorrelationReport]) -> str:
    return format_table(["Metric", "Pearson r", "Spearman rho", "N"],
                        [[r.metric_id, f"{r.pearson_r:.4f}", f"{r.spearman_rho:.4f}", str(r.n)] for r in reports])


# --- perturbations -----------------------------------------------------------


class PerturbationError(ValueError):
    pass


_ATTACHED = set(",.;:!?)]}'\"")


def _splice(text: str, start: int, end: int, new: str) -> str:
    left, right = text[:start], text[end:]
    if new:
        return left + new + right
    left = left.rstrip()
    if not left:
        return right.lstrip()
    if right and not right[0].isspace() and right[0] not in _ATTACHED:
        right = " " + right
    return left + right


def perturb(instance: Instance, hypothesis_base: str, error_type: ErrorCategory, mode: str = "rule",
            table: Optional[Mapping[str, Mapping[str, str]]] = None, judge=None) -> str:
    """Inject one controlled cultural error at the realized span.

    Rule mode: Omission deletes the span, Neutralization swaps in the
    configured hypernym, OverInterpretation inserts the configured clause
    right after the span, every other type swaps in the configured
    substitution.  ``table[instance_id][error_label]`` supplies strings.
    """
    term = instance.reference_term
    if term is None:
        raise PerturbationError(f"{instance.id}: no reference span to perturb")
    loc = locate_span(hypothesis_base, term)
    if loc is None:
        raise PerturbationError(f"{instance.id}: span {term!r} is not realized in the hypothesis")
    start, end = loc
    if mode == "judge":
        if judge is None:
            raise PerturbationError("judge-mode perturbation needs a judge")
        definitions = json.loads(load_text_asset("error_definitions.json"))
        bindings = {
            "SOURCE": instance.source_text,
            "TERM": instance.source_term,
            "EXPLICATION": instance.explication,
            "HYPOTHESIS": hypothesis_base,
            "SPAN": hypothesis_base[start:end],
            "ERROR_TYPE": error_type.label,
            "ERROR_DEFINITION": definitions[error_type.label],
        }
        text, _ = judge.ask("perturb", bindings, parse_text)
        return text
    if mode != "rule":
        raise PerturbationError(f"unknown perturbation mode {mode!r}")
    if error_type is ErrorCategory.OMISSION:
        return _splice(hypothesis_base, start, end, "")
    entry = (table or {}).get(instance.id, {}).get(error_type.label)
    if not entry:
        raise PerturbationError(f"{instance.id}: no {error_type.label} entry in the perturbation table")
    if error_type is ErrorCategory.OVER_INTERPRETATION:
        span = hypothesis_base[start:end]
        return _splice(hypothesis_base, start, end, f"{span} {entry}")
    return _splice(hypothesis_base, start, end, entry)


# --- sensitivity -------------------------------------------------------------


class ItemMetric(Protocol):
    name: str
    scale: float

    def score(self, instance: Instance, hypothesis: str) -> float: ...


class BleuMetric:
    name = "bleu"
    scale = 100.0

    def score(self, instance: Instance, hypothesis: str) -> float:
        return bleu(hypothesis, instance.reference_text).value


class ChrfMetric:
    name = "chrf_pp"
    scale = 100.0

    def score(self, instance: Instance, hypothesis: str) -> float:
        if not hypothesis.strip():
            return 0.0
        return chrf_pp(hypothesis, instance.reference_text).value


class ExternalMetric:
    def __init__(self, scorer, scale: float = 1.0):
        self.scorer = scorer
        self.name = scorer.name
        self.scale = scale

    def score(self, instance: Instance, hypothesis: str) -> float:
        return self.scorer.score(instance.source_text, hypothesis, instance.reference_text)


SENSITIVE, PARTIAL, INSENSITIVE = "Sensitive", "Partial", "Insensitive"
MARKS = {SENSITIVE: "✓", PARTIAL: "△", INSENSITIVE: "✗"}


@dataclass
class SensitivityConfig:
    mode: str = "rule"
    table: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    # fractions of the metric's scale
    sensitive_threshold: float = 0.20
    partial_threshold: float = 0.05
    parallelism: int = 1

    def classify(self, relative_drop: float) -> str:
        if relative_drop >= self.sensitive_threshold:
            return SENSITIVE
        if relative_drop >= self.partial_threshold:
            return PARTIAL
        return INSENSITIVE


@dataclass
class ItemDelta:
    instance_id: str
    base: float
    perturbed: float
    delta: float


@dataclass
class SensitivityCell:
    metric: str
    error_type: str
    scale: float
    n: int
    mean_delta: Optional[float]
    relative_drop: Optional[float]
    classification: str
    deltas: list[ItemDelta]
    errors: list[dict[str, str]]


@dataclass
class SensitivityReport:
    cells: list[SensitivityCell]
    perturbations: dict[str, dict[str, str]]

    def cell(self, metric: str, error_type: ErrorCategory | str) -> SensitivityCell:
        et = error_type.label if isinstance(error_type, ErrorCategory) else error_type
        for c in self.cells:
            if c.metric == metric and c.error_type == et:
                return c
        raise KeyError((metric, et))

    def to_dict(self) -> dict[str, Any]:
        return {"cells": [asdict(c) for c in self.cells], "perturbations": self.perturbations}

    def table(self) -> str:
        metrics = list(dict.fromkeys(c.metric for c in self.cells))
        types = list(dict.fromkeys(c.error_type for c in self.cells))
        rows = []
        for et in types:
            row = [et]
            for m in metrics:
                c = self.cell(m, et)
                row.append("error" if c.mean_delta is None else f"{MARKS[c.classification]} {c.mean_delta:.3f}")
            rows.append(row)
        return format_table(["Error type"] + metrics, rows)

    def delta_rows(self) -> list[list[Any]]:
        return [[c.metric, c.error_type, d.instance_id, d.base, d.perturbed, d.delta]
                for c in self.cells for d in c.deltas]


def sensitivity_analysis(corpus: Corpus, base_hypotheses: Mapping[str, str], error_types: Sequence[ErrorCategory],
                         metrics: Sequence[ItemMetric], config: SensitivityConfig = SensitivityConfig(),
                         judge=None) -> SensitivityReport:
    """Score each base hypothesis and its perturbed variants under every metric.

    Delta is base minus perturbed, never clamped.  Perturbations are all
    built before any scoring so a missing entry fails fast.
    """
    instances = [i for i in corpus if i.id in base_hypotheses]
    if not instances:
        raise PerturbationError("no base hypotheses match the corpus")
    perturbed: dict[str, dict[str, str]] = {}
    problems = []
    for inst in instances:
        for et in error_types:
            try:
                perturbed.setdefault(inst.id, {})[et.label] = perturb(
                    inst, base_hypotheses[inst.id], et, config.mode, config.table, judge)
            except PerturbationError as exc:
                problems.append(str(exc))
    if problems:
        raise PerturbationError("perturbations unavailable: " + "; ".join(problems))

    jobs = []
    for m in metrics:
        for inst in instances:
            jobs.append((m, inst, None, base_hypotheses[inst.id]))
            for et in error_types:
                jobs.append((m, inst, et.label, perturbed[inst.id][et.label]))

    def run(job):
        m, inst, _et, text = job
        try:
            return float(m.score(inst, text)), None
        except Exception as exc:  # recorded per cell, never aborts the run
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        results = list(pool.map(run, jobs))
    scored = {(j[0].name, j[1].id, j[2]): r for j, r in zip(jobs, results)}

    cells = []
    for m in metrics:
        for et in error_types:
            deltas, errors = [], []
            for inst in instances:
                base, berr = scored[(m.name, inst.id, None)]
                pert, perr = scored[(m.name, inst.id, et.label)]
                if berr or perr:
                    errors.append({"instance_id": inst.id, "error": berr or perr})
                    continue
                deltas.append(ItemDelta(inst.id, base, pert, base - pert))
            if deltas:
                mean = math.fsum(d.delta for d in deltas) / len(deltas)
                rel = mean / m.scale
                label = config.classify(rel)
            else:
                mean = rel = None
                label = "Error"
            cells.append(SensitivityCell(m.name, et.label, m.scale, len(deltas), mean, rel, label, deltas, errors))
    return SensitivityReport(cells, perturbed)


def parse_error_types(spec: str) -> list[ErrorCategory]:
    return [ErrorCategory.parse(x) for x in re.split(r"[,\s]+", spec.strip()) if x]
