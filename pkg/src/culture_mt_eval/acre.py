"""ACRE: validity-gated, category-conditioned translation scoring.

Per instance the pipeline is

    protocol = dispatch(category)                 # A fact-centric / B style-centric
    valid    = validator(source, term, explication, hypothesis)
    if valid: fidelity, clarity = critics(...)    # raw 1..5 each
    final    = valid * (alpha * (f - 1)/4 + beta * (c - 1)/4)

with (alpha, beta) chosen by protocol.  Ablation arms switch individual
components off; see :data:`ARMS`.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .corpus import Corpus, CulturalCategory, Instance
from .judge import JudgeClient, JudgeFailure, parse_protocol, parse_score, parse_validity
from .judge.parsing import ParseError
from .judge.templates import load_text_asset
from .reporting import fmt, format_table

logger = logging.getLogger(__name__)

ARMS = ("full", "no_gate", "no_routing", "no_explication", "no_reference")
PROMPT_MODES = ("zero_shot", "one_shot")


class AcreError(ValueError):
    pass


class MissingHypothesesError(AcreError):
    def __init__(self, missing: Sequence[str]):
        super().__init__(f"{len(missing)} instance(s) lack a hypothesis: {', '.join(missing)}")
        self.missing = list(missing)


class Protocol(str, enum.Enum):
    A_FACT_CENTRIC = "A_fact_centric"
    B_STYLE_CENTRIC = "B_style_centric"

    @property
    def label(self) -> str:
        return "Protocol A (Fact-Centric)" if self is Protocol.A_FACT_CENTRIC else "Protocol B (Style-Centric)"

    @property
    def instruction(self) -> str:
        return load_text_asset("protocol_a.instruction.txt" if self is Protocol.A_FACT_CENTRIC else "protocol_b.instruction.txt")


STATIC_ROUTING = {
    CulturalCategory.LINGUISTIC: Protocol.B_STYLE_CENTRIC,
    CulturalCategory.MATERIAL: Protocol.A_FACT_CENTRIC,
    CulturalCategory.SOCIAL: Protocol.A_FACT_CENTRIC,
    CulturalCategory.RELIGIOUS: Protocol.A_FACT_CENTRIC,
    CulturalCategory.ECOLOGICAL: Protocol.A_FACT_CENTRIC,
}


@dataclass(frozen=True)
class QualityWeights:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise AcreError(f"weights must be non-negative, got {self.alpha}, {self.beta}")
        if not math.isclose(self.alpha + self.beta, 1.0, abs_tol=1e-9):
            raise AcreError(f"alpha + beta must be 1, got {self.alpha} + {self.beta}")


DEFAULT_WEIGHTS = {
    Protocol.A_FACT_CENTRIC: QualityWeights(0.7, 0.3),
    Protocol.B_STYLE_CENTRIC: QualityWeights(0.6, 0.4),
}


@dataclass(frozen=True)
class Hypothesis:
    instance_id: str
    system_id: str
    text: str
    prompt_mode: str = "zero_shot"

    def to_dict(self) -> dict[str, str]:
        return {"instance_id": self.instance_id, "system_id": self.system_id,
                "mode": self.prompt_mode, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Hypothesis":
        mode = d.get("mode", d.get("prompt_mode", "zero_shot"))
        if mode not in PROMPT_MODES:
            raise AcreError(f"{d.get('instance_id')}: unknown prompt mode {mode!r}")
        return cls(str(d["instance_id"]), str(d.get("system_id", "system")), d["text"], mode)


def load_hypotheses(path) -> list[Hypothesis]:
    from .reporting import read_jsonl

    hyps = [Hypothesis.from_dict(r) for r in read_jsonl(path)]
    seen: set[tuple[str, str, str]] = set()
    for h in hyps:
        key = (h.instance_id, h.system_id, h.prompt_mode)
        if key in seen:
            raise AcreError(f"duplicate hypothesis for {key}")
        seen.add(key)
    return hyps


@dataclass
class AcreScore:
    instance_id: str
    validity: bool
    fidelity_raw: Optional[int]
    clarity_raw: Optional[int]
    fidelity: Optional[float]
    clarity: Optional[float]
    quality: Optional[float]
    final: float
    protocol: Protocol
    transcripts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        return d


def normalize_score(raw: int) -> float:
    return (raw - 1) / 4.0


def aggregate(validity: bool, fidelity_raw: int, clarity_raw: int, weights: QualityWeights,
              protocol: Protocol, instance_id: str = "") -> AcreScore:
    """Pure combination of the three judgments into one ACRE score."""
    for name, v in (("fidelity_raw", fidelity_raw), ("clarity_raw", clarity_raw)):
        if isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= 5:
            raise AcreError(f"{name} must be an integer in 1..5, got {v!r}")
    f, c = normalize_score(fidelity_raw), normalize_score(clarity_raw)
    quality = weights.alpha * f + weights.beta * c
    return AcreScore(instance_id, bool(validity), fidelity_raw, clarity_raw, f, c, quality,
                     quality if validity else 0.0, protocol)


# --- agents --------------------------------------------------------------


def dispatch_protocol(instance: Instance, mode: str = "static", judge: Optional[JudgeClient] = None) -> Protocol:
    static = STATIC_ROUTING[instance.category]
    if mode == "static":
        return static
    if mode != "judge":
        raise AcreError(f"unknown routing mode {mode!r}")
    if judge is None:
        raise AcreError("judge routing requested without a judge")
    try:
        label, _ = judge.ask("dispatcher", {"SOURCE_WITH_BRACKETS": instance.source_with_brackets()}, parse_protocol)
    except JudgeFailure as exc:
        if any(t.raw_response is not None for t in exc.transcripts):
            logger.warning("%s: dispatcher answer unparseable, using static route %s", instance.id, static.value)
            return static
        raise
    return Protocol.A_FACT_CENTRIC if label == "A" else Protocol.B_STYLE_CENTRIC


def validate(instance: Instance, hypothesis: Hypothesis | str, judge: JudgeClient, protocol: Optional[Protocol] = None,
             use_explication: bool = True):
    """Stage I gate. Returns ``(valid, transcript)``."""
    text = hypothesis.text if isinstance(hypothesis, Hypothesis) else hypothesis
    protocol = protocol or STATIC_ROUTING[instance.category]
    bindings = {
        "PROTOCOL_LABEL": protocol.label,
        "SOURCE": instance.source_text,
        "TERM": instance.source_term,
        # the no-explication ablation substitutes the bare term
        "EXPLICATION": instance.explication if use_explication else instance.source_term,
        "HYPOTHESIS": text,
    }
    (valid, _reason), transcript = judge.ask("validator", bindings, parse_validity)
    return valid, transcript


def score_fidelity(instance: Instance, hypothesis: Hypothesis | str, protocol: Protocol, judge: JudgeClient,
                   use_reference: bool = True, dynamic: bool = True):
    text = hypothesis.text if isinstance(hypothesis, Hypothesis) else hypothesis
    bindings = {
        "PROTOCOL_LABEL": protocol.label,
        "SOURCE": instance.source_text,
        "HYPOTHESIS": text,
        "DYNAMIC_INSTRUCTION": protocol.instruction if dynamic else "",
    }
    template = "fidelity"
    if use_reference:
        bindings["REFERENCE"] = instance.reference_text
    else:
        template = "fidelity_no_reference"
    (score, _reason), transcript = judge.ask(template, bindings, parse_score)
    return score, transcript


def score_clarity(instance: Instance, hypothesis: Hypothesis | str, judge: JudgeClient):
    text = hypothesis.text if isinstance(hypothesis, Hypothesis) else hypothesis
    (score, _reason), transcript = judge.ask("clarity", {"SOURCE": instance.source_text, "HYPOTHESIS": text}, parse_score)
    return score, transcript


# --- per-system evaluation -------------------------------------------------


@dataclass
class AcreConfig:
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    routing: str = "static"
    arm: str = "full"
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.arm not in ARMS:
            raise AcreError(f"unknown ablation arm {self.arm!r}; expected one of {ARMS}")
        if self.routing not in ("static", "judge"):
            raise AcreError(f"unknown routing mode {self.routing!r}")
        for p in Protocol:
            if p not in self.weights:
                raise AcreError(f"missing weights for {p.value}")


@dataclass
class InstanceResult:
    instance_id: str
    system_id: str
    category: str
    score: Optional[AcreScore]
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        d = {"instance_id": self.instance_id, "system_id": self.system_id, "category": self.category,
             "error": self.error}
        if self.score is not None:
            d.update({k: v for k, v in self.score.to_dict().items() if k != "instance_id"})
        return d


def score_instance(instance: Instance, text: str, config: AcreConfig, judge: JudgeClient) -> AcreScore:
    """Run dispatch, gate and critics for one hypothesis under ``config.arm``."""
    arm = config.arm
    if arm == "no_routing":
        protocol = Protocol.A_FACT_CENTRIC
    else:
        protocol = dispatch_protocol(instance, config.routing, judge)
    keys: list[str] = []
    valid, t = validate(instance, text, judge, protocol, use_explication=arm != "no_explication")
    keys.append(t.cache_key)
    weights = config.weights[protocol]
    if not valid and arm != "no_gate":
        return AcreScore(instance.id, False, None, None, None, None, None, 0.0, protocol, keys)
    f_raw, t = score_fidelity(instance, text, protocol, judge, use_reference=arm != "no_reference",
                              dynamic=arm != "no_routing")
    keys.append(t.cache_key)
    c_raw, t = score_clarity(instance, text, judge)
    keys.append(t.cache_key)
    score = aggregate(valid, f_raw, c_raw, weights, protocol, instance.id)
    if arm == "no_gate":
        score.final = score.quality
    score.transcripts = keys
    return score


@dataclass
class SystemReport:
    system_id: str
    arm: str
    prompt_mode: str
    n: int
    n_failed: int
    validity_rate: float
    mean_fidelity_valid: Optional[float]
    mean_clarity_valid: Optional[float]
    mean_fidelity_raw_valid: Optional[float]
    mean_clarity_raw_valid: Optional[float]
    mean_acre: float
    per_category: dict[str, dict[str, Any]]
    run_id: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def table(self) -> str:
        header = ["System", "Arm", "Mode", "N", "Validity", "Fidelity", "Clarity", "ACRE"]
        rows = [[self.system_id, self.arm, self.prompt_mode, str(self.n), fmt(self.validity_rate),
                 fmt(self.mean_fidelity_valid), fmt(self.mean_clarity_valid), fmt(self.mean_acre)]]
        out = format_table(header, rows)
        cat_rows = [[cat, str(v["n"]), fmt(v["validity_rate"]), fmt(v["mean_acre"])]
                    for cat, v in self.per_category.items()]
        return out + "\n" + format_table(["Category", "N", "Validity", "ACRE"], cat_rows)


def _mean(xs: list[float]) -> Optional[float]:
    return math.fsum(xs) / len(xs) if xs else None


def summarize(results: Iterable[InstanceResult], system_id: str, arm: str, prompt_mode: str) -> SystemReport:
    results = list(results)
    ok = [r for r in results if r.score is not None]
    valid = [r.score for r in ok if r.score.validity and r.score.fidelity is not None]
    per_cat: dict[str, dict[str, Any]] = {}
    for cat in CulturalCategory:
        rs = [r.score for r in ok if r.category == cat.value]
        if rs:
            per_cat[cat.value] = {
                "n": len(rs),
                "validity_rate": sum(1 for s in rs if s.validity) / len(rs),
                "mean_acre": math.fsum(s.final for s in rs) / len(rs),
            }
    n = len(ok)
    return SystemReport(
        system_id=system_id,
        arm=arm,
        prompt_mode=prompt_mode,
        n=n,
        n_failed=len(results) - n,
        validity_rate=(sum(1 for r in ok if r.score.validity) / n) if n else 0.0,
        mean_fidelity_valid=_mean([s.fidelity for s in valid]),
        mean_clarity_valid=_mean([s.clarity for s in valid]),
        mean_fidelity_raw_valid=_mean([float(s.fidelity_raw) for s in valid]),
        mean_clarity_raw_valid=_mean([float(s.clarity_raw) for s in valid]),
        mean_acre=(math.fsum(r.score.final for r in ok) / n) if n else 0.0,
        per_category=per_cat,
    )


def _match_hypotheses(corpus: Corpus, hypotheses: Sequence[Hypothesis]) -> dict[str, Hypothesis]:
    by_id: dict[str, Hypothesis] = {}
    systems = {(h.system_id, h.prompt_mode) for h in hypotheses}
    if len(systems) > 1:
        raise AcreError(f"hypotheses mix several systems/modes: {sorted(systems)}")
    for h in hypotheses:
        if h.instance_id in by_id:
            raise AcreError(f"duplicate hypothesis for instance {h.instance_id}")
        by_id[h.instance_id] = h
    missing = [i for i in corpus.ids if i not in by_id]
    if missing:
        raise MissingHypothesesError(missing)
    extra = sorted(set(by_id) - set(corpus.ids))
    if extra:
        logger.warning("ignoring hypotheses for %d id(s) not in the corpus: %s", len(extra), ", ".join(extra))
    return by_id


def evaluate_system(corpus: Corpus, hypotheses: Sequence[Hypothesis], config: AcreConfig,
                    judge: JudgeClient) -> tuple[SystemReport, list[InstanceResult]]:
    by_id = _match_hypotheses(corpus, hypotheses)
    first = by_id[corpus.ids[0]] if len(corpus) else None
    system_id = first.system_id if first else "system"
    mode = first.prompt_mode if first else "zero_shot"

    def run(inst: Instance) -> InstanceResult:
        try:
            score = score_instance(inst, by_id[inst.id].text, config, judge)
            return InstanceResult(inst.id, system_id, inst.category.value, score)
        except (JudgeFailure, ParseError) as exc:
            logger.warning("%s: %s", inst.id, exc)
            return InstanceResult(inst.id, system_id, inst.category.value, None, str(exc))

    # results come back in corpus order whatever the parallelism
    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        results = list(pool.map(run, corpus.instances))
    return summarize(results, system_id, config.arm, mode), results


def evaluate_ablation(corpus: Corpus, hypotheses: Sequence[Hypothesis], arm: str, judge: JudgeClient,
                      config: Optional[AcreConfig] = None) -> tuple[SystemReport, list[InstanceResult]]:
    base = config or AcreConfig()
    cfg = AcreConfig(weights=base.weights, routing=base.routing, arm=arm, parallelism=base.parallelism)
    return evaluate_system(corpus, hypotheses, cfg, judge)


class AcreMetric:
    """ACRE as a per-item metric (scale 1.0) for sensitivity runs."""

    name = "acre"
    scale = 1.0

    def __init__(self, judge: JudgeClient, config: Optional[AcreConfig] = None):
        self.judge = judge
        self.config = config or AcreConfig()

    def score(self, instance: Instance, hypothesis: str) -> float:
        return score_instance(instance, hypothesis, self.config, self.judge).final
