import json

import pytest

from conftest import mock_client
from culture_mt_eval.corpus import CulturalCategory as C
from culture_mt_eval.judge import JudgeFailure
from culture_mt_eval.mining import (Candidate, ExtractionStats, MiningError, build_corpus, category_counts,
                                    chunk_pairs, classify_candidate, dedupe, extract_candidates, read_bilingual)


@pytest.fixture
def pairs(fix):
    return read_bilingual(fix / "mining_raw.tsv")


@pytest.fixture
def sidecar(fix):
    return json.loads((fix / "mining_sidecar.json").read_text(encoding="utf-8"))


def mine(fix, pairs, sidecar, source="judge"):
    client = mock_client(fix / "mining_mock.json")
    stats = ExtractionStats()
    cands = []
    for off, text in chunk_pairs(pairs):
        cands += extract_candidates(text, client, origin=f"raw:{off}", stats=stats)
    labeled = [(c, classify_candidate(c, client)[0]) for c in dedupe(cands)]
    return client, stats, labeled, build_corpus(labeled, source, sidecar, client)


def test_read_layouts(tmp_path, pairs):
    assert len(pairs) == 4 and pairs[0][0].startswith("冬天")
    p = tmp_path / "x.txt"
    p.write_text("源一\nsrc one\n\n源二\nsrc two\n", encoding="utf-8")
    assert read_bilingual(p, "interleaved") == [("源一", "src one"), ("源二", "src two")]
    p.write_text("a\tb\tc\n", encoding="utf-8")
    with pytest.raises(MiningError, match=":1"):
        read_bilingual(p)
    with pytest.raises(MiningError):
        read_bilingual(p, "xml")


def test_chunks_respect_bound_and_boundaries(pairs):
    chunks = chunk_pairs(pairs * 10, max_chars=300)
    assert all(len(t) <= 300 for _, t in chunks)
    assert sum(t.count("\n\n") + 1 for _, t in chunks) == 40
    assert [o for o, _ in chunks][0] == 0


def test_extraction_filters_bad_entries(fix, pairs, sidecar):
    client, stats, labeled, corpus = mine(fix, pairs, sidecar)
    assert (stats.returned, stats.kept, stats.dropped_invariant, stats.dropped_malformed) == (5, 3, 1, 1)
    assert [c.focus_term for c, _ in labeled] == ["炕", "摸鱼", "赤脚医生"]


def test_mined_corpus(fix, pairs, sidecar):
    client, _, labeled, corpus = mine(fix, pairs, sidecar)
    assert corpus.ids == ["m1", "m2", "m3"]
    m1, m2, m3 = corpus.instances
    assert m1.category is C.MATERIAL and m1.source_term == "炕" and m1.reference_term == "kang"
    assert m1.standard_equivalent == "kang"
    assert m2.category is C.LINGUISTIC and m2.reference_term == "slacking off"
    assert m3.category is C.SOCIAL and m3.reference_span is None
    assert m3.metadata["explication_source"] == "machine"
    assert "explication_source" not in m1.metadata
    assert category_counts(labeled) == {"Material": 1, "Linguistic": 1, "Social": 1}
    # 1 mining + 3 taxonomy + 1 repair + 1 explicate
    assert len(client.transcripts) == 6


def test_manual_explications_required(fix, pairs, sidecar):
    with pytest.raises(MiningError, match="赤脚医生"):
        mine(fix, pairs, sidecar, source="manual_file")


def test_candidate_invariant_and_roundtrip():
    with pytest.raises(MiningError):
        Candidate("今天天气很好。", "x", "炕")
    c = Candidate("他睡在炕上。", "He sleeps on the kang.", "炕", "f#0")
    assert Candidate.from_dict(c.to_dict()) == c
    assert dedupe([c, c, Candidate(c.src, c.tgt, "炕", "other")]) == [c]


def test_oversized_chunk_rejected(fix):
    with pytest.raises(MiningError, match="exceeds"):
        extract_candidates("x" * 50, mock_client(fix / "mining_mock.json"), max_chars=10)


def test_taxonomy_failure_after_repair():
    client = mock_client({"defaults": {"taxonomy": "no json here"}})
    with pytest.raises(JudgeFailure):
        classify_candidate(Candidate("他睡在炕上。", "x", "炕"), client)


def test_repeated_term_uses_first_occurrence():
    c = Candidate("炕上有炕。", "A kang.", "炕")
    corpus = build_corpus([(c, C.MATERIAL)], sidecar={"炕": {"explication": "bed", "target_term": "kang"}})
    assert corpus.instances[0].source_span == (0, 1)
    assert corpus.instances[0].metadata["span_tie"] == "first_occurrence"
