import itertools

import pytest

from conftest import mock_client
from culture_mt_eval.error_taxonomy import (ErrorAnnotation, ErrorCategory, assign_primary, classify_errors,
                                            distribution_table, error_distribution, load_annotations,
                                            parse_error_labels)
from culture_mt_eval.judge.parsing import ParseError

E = ErrorCategory
ORDER = [E.OMISSION, E.LITERALIZATION, E.SENSE_ERROR, E.NEUTRALIZATION, E.MIS_SUBSTITUTION, E.PRAGMATIC_SHIFT,
         E.OVER_INTERPRETATION]


def test_priority_order():
    assert sorted(E, key=lambda c: c.priority) == ORDER
    assert [c.label for c in ORDER] == ["Omission", "Literalization", "SenseError", "Neutralization",
                                        "MisSubstitution", "PragmaticShift", "OverInterpretation"]


def test_every_subset_gets_highest_priority_label():
    for k in range(1, 8):
        for subset in itertools.combinations(E, k):
            expected = next(c for c in ORDER if c in subset)
            assert assign_primary(subset) is expected
    assert assign_primary([]) is None
    assert assign_primary({E.LITERALIZATION, E.NEUTRALIZATION}) is E.LITERALIZATION


@pytest.mark.parametrize("text,cat", [("Sense Error", E.SENSE_ERROR), ("over-interpretation", E.OVER_INTERPRETATION),
                                      ("misSubstitution", E.MIS_SUBSTITUTION), ("OMISSION", E.OMISSION)])
def test_parse_category(text, cat):
    assert E.parse(text) is cat


def test_parse_category_unknown():
    with pytest.raises(ValueError):
        E.parse("Correct")


def test_distribution_fixture(fix):
    prof = error_distribution(load_annotations(fix / "errors.jsonl"))
    a, b = prof["sysA"], prof["sysB"]
    assert a.n == 10 and a.correctness_rate == pytest.approx(0.3)
    for lab in ("Omission", "Literalization", "SenseError", "MisSubstitution", "PragmaticShift"):
        assert a.shares[lab] == pytest.approx(1 / 7)
    assert a.shares["Neutralization"] == pytest.approx(2 / 7)
    assert a.shares["OverInterpretation"] == 0.0
    assert b.correctness_rate == pytest.approx(0.5)
    assert b.shares["Literalization"] == pytest.approx(0.4)
    assert b.shares["Omission"] == pytest.approx(0.2)
    assert b.shares["Neutralization"] == pytest.approx(0.2)
    assert b.shares["OverInterpretation"] == pytest.approx(0.2)
    for p in prof.values():
        assert sum(p.shares.values()) == pytest.approx(1.0)
    assert "sysA" in distribution_table(prof)


def test_all_correct_system_has_no_shares():
    prof = error_distribution([ErrorAnnotation("a1", "s", frozenset())])
    assert prof["s"].correctness_rate == 1.0 and prof["s"].shares == {}


def test_pooled_and_unknown_systems(fix):
    anns = load_annotations(fix / "errors.jsonl")
    assert error_distribution(anns, by_system=False)["ALL"].n == 20
    with pytest.raises(ValueError, match="sysB"):
        error_distribution(anns, known_systems=["sysA"])


def test_annotation_roundtrip():
    a = ErrorAnnotation("a1", "s", frozenset({E.NEUTRALIZATION, E.OMISSION}), "judge")
    d = a.to_dict()
    assert d["labels"] == ["Omission", "Neutralization"]
    assert ErrorAnnotation.from_dict(d) == a
    with pytest.raises(ValueError):
        ErrorAnnotation.from_dict({**d, "source": "crowd"})


@pytest.mark.parametrize("raw,expected", [
    ("Labels: Omission, Neutralization", {E.OMISSION, E.NEUTRALIZATION}),
    ("reasoning...\n**Labels:** NONE", set()),
    ("SenseError", {E.SENSE_ERROR}),
    ("Labels: [Pragmatic Shift; over-interpretation]", {E.PRAGMATIC_SHIFT, E.OVER_INTERPRETATION}),
])
def test_parse_error_labels(raw, expected):
    assert parse_error_labels(raw) == frozenset(expected)


@pytest.mark.parametrize("raw", ["Labels: ", "Labels: Typo", "", None])
def test_parse_error_labels_rejects(raw):
    with pytest.raises(ParseError):
        parse_error_labels(raw)


def test_classify_errors_with_judge(sample):
    client = mock_client({"defaults": {"error_classify": "Labels: Literalization, Neutralization"}})
    labels = classify_errors(sample["a8"], "She wore a red flag dress.", client)
    assert assign_primary(labels) is E.LITERALIZATION
    prompt = client.transcripts[0].rendered_prompt
    assert sample["a8"].explication in prompt and "red flag dress" in prompt
