"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` or directly as a script.
Each check is timed against its runtime budget.
"""
import itertools
import json
import random
import string
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import DATA, FIX, mock_client  # noqa: E402
from oracles import oracle_bleu, oracle_chrf, oracle_pearson, oracle_ranks_bisect  # noqa: E402
from culture_mt_eval.acre import (ARMS, AcreConfig, Protocol, QualityWeights, aggregate, evaluate_ablation,  # noqa: E402
                                  evaluate_system, load_hypotheses)
from culture_mt_eval.corpus import Corpus, CulturalCategory, Instance, corpus_stats, load_corpus  # noqa: E402
from culture_mt_eval.error_taxonomy import ErrorCategory, assign_primary  # noqa: E402
from culture_mt_eval.judge.parsing import ParseError, parse_score, parse_validity  # noqa: E402
from culture_mt_eval.judge.templates import TEMPLATE_IDS, load_template, render_prompt  # noqa: E402
from culture_mt_eval.meta_eval import (BleuMetric, ChrfMetric, SensitivityConfig, correlate_metrics,  # noqa: E402
                                       load_judgments, pearson, sensitivity_analysis, spearman)
from culture_mt_eval.acre import AcreMetric  # noqa: E402
from culture_mt_eval.reporting import dumps  # noqa: E402
from culture_mt_eval.surface_metrics import bleu, chrf_pp  # noqa: E402

HALF = {p: QualityWeights(0.5, 0.5) for p in Protocol}
LINES = []  # echoed in the pytest terminal summary


class Check:
    def __init__(self):
        self.problems = []

    def that(self, cond, msg):
        if not cond:
            self.problems.append(msg)


def run_criterion(number, title, budget, body):
    check = Check()
    t0 = time.perf_counter()
    try:
        body(check)
    except Exception as exc:  # a crash is a FAIL with its reason
        check.problems.append(f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - t0
    check.that(elapsed < budget, f"runtime {elapsed:.2f}s over {budget}s")
    status = "FAIL" if check.problems else "PASS"
    line = f"AC{number:<2} {status}  {title}  ({elapsed:.2f}s / {budget}s)"
    if check.problems:
        line += "  -- " + "; ".join(check.problems[:3])
    LINES.append(line)
    if __name__ == "__main__":
        print(line, flush=True)
    return check.problems


# --- 1 ------------------------------------------------------------------------


def ac1(c):
    settings = [QualityWeights(0.7, 0.3), QualityWeights(0.6, 0.4), QualityWeights(0.5, 0.5)]
    n = 0
    for w, v, f, cl in itertools.product(settings, (True, False), range(1, 6), range(1, 6)):
        s = aggregate(v, f, cl, w, Protocol.A_FACT_CENTRIC)
        n += 1
        if not v:
            c.that(s.final == 0.0, f"invalid {w} {f} {cl} gave {s.final}")
        else:
            expected = w.alpha * (f - 1) / 4 + w.beta * (cl - 1) / 4
            c.that(abs(s.final - expected) <= 1e-12, f"{w} {f} {cl}: {s.final} != {expected}")
    c.that(n == 150, f"{n} cases")


# --- 2 ------------------------------------------------------------------------

ALPHABET = ["the", "cat", "sat", "on", "mat", "qipao", "Grain", "Rain", "a", "of", "猫", "坐", "旗", "袍", "了",
            ",", ".", "!", "?", "'", "-", "42", "x1"]


def random_text(rng, lo=1, hi=12):
    toks = [rng.choice(ALPHABET) for _ in range(rng.randint(lo, hi))]
    return "".join(t + (" " if rng.random() < 0.7 else "") for t in toks).strip()


def ac2(c):
    rng = random.Random(2)
    for _ in range(50):
        s = random_text(rng)
        c.that(bleu(s, s).value == pytest.approx(100.0, abs=1e-9), f"BLEU({s!r}, same) != 100")
        c.that(chrf_pp(s, s).value == pytest.approx(100.0, abs=1e-9), f"chrF++({s!r}, same) != 100")
    for _ in range(100):
        h, r = random_text(rng), random_text(rng)
        b, ob = bleu(h, r).value, oracle_bleu(h, r)
        f, of = chrf_pp(h, r).value, oracle_chrf(h, r)
        c.that(abs(b - ob) <= 1e-6, f"BLEU {h!r}/{r!r}: {b} vs {ob}")
        c.that(abs(f - of) <= 1e-6, f"chrF++ {h!r}/{r!r}: {f} vs {of}")


# --- 3 ------------------------------------------------------------------------


def ac3(c):
    rng = random.Random(3)
    done = 0
    while done < 1000:
        n = rng.randint(10, 200)
        if rng.random() < 0.5:
            xs = [float(rng.randint(0, 6)) for _ in range(n)]  # heavy ties
        else:
            xs = [rng.gauss(0, 1) for _ in range(n)]
        ys = [rng.choice((0.0, 1.0)) if rng.random() < 0.3 else rng.uniform(-5, 5) for _ in range(n)]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        done += 1
        p, op = pearson(xs, ys), oracle_pearson(xs, ys)
        s, os_ = spearman(xs, ys), oracle_pearson(oracle_ranks_bisect(xs), oracle_ranks_bisect(ys))
        c.that(abs(p - op) <= 1e-9, f"pearson n={n}: {p} vs {op}")
        c.that(abs(s - os_) <= 1e-9, f"spearman n={n}: {s} vs {os_}")
    xs = [rng.random() for _ in range(100)]
    c.that(spearman(xs, [x ** 3 + 7 for x in xs]) == 1.0, "monotone case is not exactly 1.0")
    c.that(spearman([1, 2, 2, 3], [1, 3, 3, 5]) == 1.0, "tie fixture is not 1.0")


# --- 4 ------------------------------------------------------------------------


def ac4(c):
    cats = list(ErrorCategory)
    n = 0
    for k in range(1, 8):
        for subset in itertools.combinations(cats, k):
            n += 1
            oracle = min(subset, key=lambda e: e.priority)
            c.that(assign_primary(subset) is oracle, f"{subset}")
    c.that(n == 127, f"{n} subsets")
    c.that(assign_primary({ErrorCategory.LITERALIZATION, ErrorCategory.NEUTRALIZATION})
           is ErrorCategory.LITERALIZATION, "{Literalization, Neutralization}")


# --- 5 ------------------------------------------------------------------------

COUNTS = {"Linguistic": 2512, "Social": 2399, "Material": 1594, "Ecological": 833, "Religious": 621}
RATIOS = {"Linguistic": 31.6, "Social": 30.1, "Material": 20.0, "Ecological": 10.5, "Religious": 7.8}


def ac5(c):
    insts = []
    for cat, n in COUNTS.items():
        for k in range(n):
            insts.append(Instance(f"{cat[:3]}{k}", "他睡在炕上。", "He sleeps on the kang.", (3, 4), (17, 21),
                                  CulturalCategory.parse(cat), "A heated brick bed."))
    st = corpus_stats(Corpus(tuple(insts)))
    rows = {r.category: r for r in st.rows}
    c.that(st.total.count == 7959, f"total {st.total.count}")
    for cat, want in RATIOS.items():
        c.that(rows[cat].count == COUNTS[cat], f"{cat} count {rows[cat].count}")
        c.that(abs(rows[cat].ratio - want) <= 0.05, f"{cat} ratio {rows[cat].ratio} vs {want}")


# --- 6 ------------------------------------------------------------------------


def ac6(c):
    corpus = load_corpus(DATA / "sample_corpus.jsonl")
    hyps = load_hypotheses(DATA / "sample_hyps.jsonl")
    blobs = []
    for par in (1, 8):
        rep, res = evaluate_system(corpus, hyps, AcreConfig(parallelism=par), mock_client(DATA / "sample_mock.json"))
        blobs.append((dumps([r.to_dict() for r in res]), dumps(rep.to_dict())))
        c.that(rep.n == 50 and rep.n_failed == 0, f"parallelism {par}: n={rep.n} failed={rep.n_failed}")
    c.that(blobs[0][0] == blobs[1][0], "per-instance scores differ between parallelism 1 and 8")
    c.that(blobs[0][1] == blobs[1][1], "system reports differ between parallelism 1 and 8")
    hand = load_corpus(FIX / "hand4_corpus.jsonl")
    rep, _ = evaluate_system(hand, load_hypotheses(FIX / "hand4_hyps.jsonl"), AcreConfig(weights=HALF),
                             mock_client(FIX / "hand4_mock.json"))
    c.that(rep.validity_rate == 0.75, f"hand validity_rate {rep.validity_rate}")
    c.that(abs(rep.mean_acre - 0.75) <= 1e-12, f"hand mean_acre {rep.mean_acre}")


# --- 7 ------------------------------------------------------------------------


def ac7(c):
    corpus = load_corpus(FIX / "ablation_corpus.jsonl")
    hyps = load_hypotheses(FIX / "ablation_hyps.jsonl")
    judg = load_judgments(FIX / "ablation_judgments.jsonl")
    r = {}
    for arm in ("full", "no_gate"):
        _, res = evaluate_ablation(corpus, hyps, arm, mock_client(FIX / "ablation_mock.json"), AcreConfig(weights=HALF))
        scores = {(x.instance_id, x.system_id): x.score.final for x in res}
        r[arm] = correlate_metrics({"acre": scores}, judg)[0].pearson_r
    c.that(r["full"] > r["no_gate"], f"full r={r['full']:.4f} not above no_gate r={r['no_gate']:.4f}")


# --- 8 ------------------------------------------------------------------------


def ac8(c):
    sens = json.loads((FIX / "sensitivity.json").read_text(encoding="utf-8"))
    corpus = load_corpus(DATA / "sample_corpus.jsonl")
    types = [ErrorCategory.OMISSION, ErrorCategory.SENSE_ERROR, ErrorCategory.OVER_INTERPRETATION]
    metrics = [BleuMetric(), ChrfMetric(), AcreMetric(mock_client(FIX / "sensitivity_mock.json"))]
    rep = sensitivity_analysis(corpus, sens["base"], types, metrics, SensitivityConfig(table=sens["table"]))
    om = rep.cell("bleu", ErrorCategory.OMISSION)
    c.that(om.n == len(sens["base"]) and om.n >= 10, f"omission cell has {om.n} items")
    for d in om.deltas:
        c.that(d.delta > 0, f"BLEU omission delta {d.delta:.3f} on {d.instance_id}")
    over = rep.cell("bleu", ErrorCategory.OVER_INTERPRETATION)
    c.that(over.classification == "Insensitive", f"BLEU OverInterpretation is {over.classification} "
                                                 f"(mean delta {over.mean_delta:.3f})")
    for d in rep.cell("acre", ErrorCategory.SENSE_ERROR).deltas:
        c.that(d.perturbed == 0.0 and d.delta == d.base, f"ACRE SenseError on {d.instance_id}: {d}")


# --- 9 ------------------------------------------------------------------------


def ac9(c):
    bindings = json.loads((FIX / "golden" / "bindings.json").read_text(encoding="utf-8"))
    for tid in TEMPLATE_IDS:
        t = load_template(tid)
        text = render_prompt(t, {k: bindings[k] for k in t.placeholders}).text
        golden = (FIX / "golden" / f"{tid}.txt").read_text(encoding="utf-8")
        c.that(text == golden, f"{tid} render differs from golden")
    c.that(len(TEMPLATE_IDS) == 8, "template count")
    corpus = load_corpus(DATA / "sample_corpus.jsonl")
    hyps = load_hypotheses(DATA / "sample_hyps.jsonl")
    by_src = {i.source_text: i for i in corpus}
    # a few sample hypotheses copy the reference verbatim, so the hypothesis
    # slot is masked before looking for leaked text
    for arm, tid, field, present in (("no_reference", "fidelity_no_reference", "reference_text", False),
                                     ("full", "fidelity", "reference_text", True),
                                     ("no_explication", "validator", "explication", False),
                                     ("full", "validator", "explication", True)):
        client = mock_client({"defaults": {"validator": "Decision: VALID", "fidelity": "Score: 4",
                                           "clarity": "Score: 4"}})
        evaluate_ablation(corpus, hyps, arm, client)
        if arm == "no_reference":
            c.that(not any(t.request.template_id == "fidelity" for t in client.transcripts),
                   "no_reference still used the reference-bearing fidelity prompt")
        ts = [t for t in client.transcripts if t.request.template_id == tid]
        c.that(len(ts) == 50, f"{arm}: {len(ts)} {tid} transcripts")
        for t in ts:
            b = dict(t.request.bindings)
            inst = by_src[b["SOURCE"]]
            text = getattr(inst, field)
            masked = t.rendered_prompt.replace(b["HYPOTHESIS"], "") if "HYPOTHESIS" in b else t.rendered_prompt
            bound = any(text in v for k, v in b.items() if k != "HYPOTHESIS")
            seen = bound if present else bound or text in masked
            c.that(seen is present, f"{arm}/{tid}: {inst.id} {field} presence is {seen}, expected {present}")
    c.that(set(ARMS) >= {"no_reference", "no_explication"}, "arms")


# --- 10 -----------------------------------------------------------------------

FRAGMENTS = ["Decision:", "decision :", "**Decision:**", "Score:", "score: ", "VALID", "INVALID", "valid", "NOT",
             "Reasoning:", "5", "4/5", "[3]", "0", "6", "-2", "3.5", "1e3", "\n", " ", "*", "#", "ÿ", "雨", "\x00",
             "٣", "²", "Score: 4\nScore:", "Decision: VALID\nDecision:"]


def fuzz_string(rng):
    if rng.random() < 0.3:
        return "".join(rng.choice(string.printable) for _ in range(rng.randint(0, 40)))
    return "".join(rng.choice(FRAGMENTS) for _ in range(rng.randint(1, 8)))


def ac10(c):
    rng = random.Random(10)
    ok = {"validity": 0, "score": 0}
    for _ in range(10_000):
        s = fuzz_string(rng)
        try:
            v, reason = parse_validity(s)
            c.that(type(v) is bool and isinstance(reason, str), f"parse_validity({s!r}) -> {v!r}")
            ok["validity"] += 1
        except ParseError:
            pass
        try:
            n, reason = parse_score(s)
            c.that(type(n) is int and 1 <= n <= 5 and isinstance(reason, str), f"parse_score({s!r}) -> {n!r}")
            ok["score"] += 1
        except ParseError:
            pass
    # the generator must exercise both outcomes
    c.that(0 < ok["validity"] < 10_000 and 0 < ok["score"] < 10_000, f"degenerate fuzz: {ok}")


CRITERIA = [
    (1, "ACRE gate and weighting over 150 cases", 1, ac1),
    (2, "BLEU/chrF++ identity and oracle agreement", 10, ac2),
    (3, "Pearson/Spearman oracle agreement", 5, ac3),
    (4, "primary-label priority rule on 127 subsets", 1, ac4),
    (5, "category ratios on synthetic 7959-instance corpus", 5, ac5),
    (6, "deterministic mock ACRE and hand fixture", 30, ac6),
    (7, "gate ablation lowers correlation", 30, ac7),
    (8, "sensitivity asymmetry", 60, ac8),
    (9, "golden prompts and ablation prompt contents", 5, ac9),
    (10, "validity/score parser totality", 10, ac10),
]


@pytest.mark.parametrize("number,title,budget,body", CRITERIA, ids=[f"AC{n}" for n, *_ in CRITERIA])
def test_acceptance(number, title, budget, body):
    problems = run_criterion(number, title, budget, body)
    assert not problems, "; ".join(problems)


if __name__ == "__main__":
    failed = sum(bool(run_criterion(*row)) for row in CRITERIA)
    sys.exit(1 if failed else 0)
