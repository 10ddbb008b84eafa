import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import mock_client
from oracles import oracle_pearson, oracle_ranks, oracle_spearman
from culture_mt_eval.acre import AcreMetric
from culture_mt_eval.error_taxonomy import ErrorCategory as E
from culture_mt_eval.meta_eval import (BleuMetric, ChrfMetric, CorrelationError, HumanJudgment, PerturbationError,
                                       SensitivityConfig, average_ranks, correlate_metrics, correlation_table,
                                       load_judgments, parse_error_types, pearson, perturb, sensitivity_analysis,
                                       spearman)


@pytest.fixture
def sens(fix):
    return json.loads((fix / "sensitivity.json").read_text(encoding="utf-8"))


vectors = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5).map(float), min_size=n, max_size=n),
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_correlations_match_oracle(v):
    xs, ys = v
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        with pytest.raises(CorrelationError):
            pearson(xs, ys)
        return
    try:
        expected = oracle_pearson(xs, ys)
    except ZeroDivisionError:  # subnormal spread
        with pytest.raises(CorrelationError):
            pearson(xs, ys)
        return
    assert pearson(xs, ys) == pytest.approx(expected, abs=1e-9)
    assert spearman(xs, ys) == pytest.approx(oracle_spearman(xs, ys), abs=1e-9)


def test_ranks_with_ties():
    assert average_ranks([10, 20, 20, 5]) == [2.0, 3.5, 3.5, 1.0]
    assert average_ranks([3, 1, 2]) == oracle_ranks([3, 1, 2])


def test_monotone_and_tie_fixture():
    xs = list(range(50))
    assert spearman(xs, [x ** 3 for x in xs]) == 1.0
    assert spearman([1, 2, 2, 3], [1, 3, 3, 5]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0


@pytest.mark.parametrize("xs,ys", [([1, 2], [1]), ([1], [1]), ([1, 1, 1], [1, 2, 3])])
def test_correlation_errors(xs, ys):
    with pytest.raises(CorrelationError):
        pearson(xs, ys)


def test_correlate_metrics_and_missing(fix):
    judg = load_judgments(fix / "ablation_judgments.jsonl")
    truth = {j.key: float(j.cultural_correct) for j in judg}
    noisy = {k: v + random.Random(k[0]).random() * 0.1 for k, v in truth.items()}
    reps = correlate_metrics({"perfect": truth, "noisy": noisy}, judg)
    assert [r.metric_id for r in reps] == ["noisy", "perfect"]
    assert reps[1].pearson_r == pytest.approx(1.0) and reps[1].n == 12
    assert "Pearson" in correlation_table(reps)
    partial = dict(list(truth.items())[:5])
    with pytest.raises(CorrelationError, match="scores missing"):
        correlate_metrics({"m": partial}, judg)


def test_duplicate_judgments(tmp_path):
    p = tmp_path / "j.jsonl"
    row = json.dumps({"instance_id": "a1", "system_id": "s", "cultural_correct": True})
    p.write_text(row + "\n" + row + "\n")
    with pytest.raises(CorrelationError, match="duplicate"):
        load_judgments(p)


def test_constant_truth_is_error():
    js = [HumanJudgment("a", "s", True), HumanJudgment("b", "s", True)]
    with pytest.raises(CorrelationError, match="zero variance"):
        correlate_metrics({"m": {("a", "s"): 0.1, ("b", "s"): 0.9}}, js)


def test_perturb_rules(sample, sens):
    inst, base = sample["a2"], sens["base"]["a2"]
    term = inst.reference_term
    assert term in base
    omitted = perturb(inst, base, E.OMISSION)
    assert term not in omitted and "  " not in omitted and omitted.endswith(".")
    neut = perturb(inst, base, E.NEUTRALIZATION, table=sens["table"])
    assert sens["table"]["a2"]["Neutralization"] in neut and term not in neut
    over = perturb(inst, base, E.OVER_INTERPRETATION, table=sens["table"])
    assert over.startswith(base[:base.index(term) + len(term)])
    assert sens["table"]["a2"]["OverInterpretation"] in over


def test_perturb_failures(sample, sens):
    with pytest.raises(PerturbationError, match="not realized"):
        perturb(sample["a2"], "Nothing relevant here.", E.OMISSION)
    with pytest.raises(PerturbationError, match="no SenseError entry"):
        perturb(sample["a2"], sens["base"]["a2"], E.SENSE_ERROR, table={})
    with pytest.raises(PerturbationError):
        perturb(sample["a2"], sens["base"]["a2"], E.OMISSION, mode="judge")


def test_perturb_judge_mode(sample, sens):
    client = mock_client({"defaults": {"perturb": "This is typical favoritism.\n"}})
    out = perturb(sample["a2"], sens["base"]["a2"], E.NEUTRALIZATION, mode="judge", judge=client)
    assert out == "This is typical favoritism."
    assert "Neutralization" in client.transcripts[0].rendered_prompt


def run_sensitivity(sample, sens, fix, types=tuple(E), parallelism=1):
    metrics = [BleuMetric(), ChrfMetric(), AcreMetric(mock_client(fix / "sensitivity_mock.json"))]
    return sensitivity_analysis(sample, sens["base"], list(types), metrics,
                                SensitivityConfig(table=sens["table"], parallelism=parallelism))


def test_sensitivity_asymmetry(sample, sens, fix):
    rep = run_sensitivity(sample, sens, fix)
    om = rep.cell("bleu", E.OMISSION)
    assert om.n == 10 and all(d.delta > 0 for d in om.deltas)
    assert rep.cell("bleu", E.OVER_INTERPRETATION).classification == "Insensitive"
    sense = rep.cell("acre", E.SENSE_ERROR)
    assert all(d.delta == pytest.approx(d.base) and d.perturbed == 0.0 for d in sense.deltas)
    assert sense.classification == "Sensitive"
    assert "OverInterpretation" in rep.table()


def test_sensitivity_is_deterministic_across_parallelism(sample, sens, fix):
    a = run_sensitivity(sample, sens, fix, parallelism=1).to_dict()
    b = run_sensitivity(sample, sens, fix, parallelism=6).to_dict()
    assert a == b


def test_sensitivity_missing_entry_fails_fast(sample, sens):
    with pytest.raises(PerturbationError, match="perturbations unavailable"):
        sensitivity_analysis(sample, sens["base"], [E.SENSE_ERROR], [BleuMetric()], SensitivityConfig(table={}))


def test_metric_errors_are_recorded(sample, sens):
    class Boom:
        name, scale = "boom", 1.0

        def score(self, inst, hyp):
            raise RuntimeError("down")

    rep = sensitivity_analysis(sample, sens["base"], [E.OMISSION], [Boom()], SensitivityConfig())
    cell = rep.cell("boom", E.OMISSION)
    assert cell.classification == "Error" and cell.mean_delta is None and len(cell.errors) == 10


def test_thresholds():
    cfg = SensitivityConfig()
    assert [cfg.classify(x) for x in (0.2, 0.19, 0.05, 0.049, -0.3)] == [
        "Sensitive", "Partial", "Partial", "Insensitive", "Insensitive"]


def test_parse_error_types():
    assert parse_error_types("Omission, over-interpretation") == [E.OMISSION, E.OVER_INTERPRETATION]
