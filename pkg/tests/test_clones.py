from __future__ import annotations

import random

import pytest

from oracles import brute_best_gapped, brute_maximal_repeats, random_unit_corpus
from qaforge.clones import (
    CloneParams,
    UndefinedMetricsError,
    blow_up,
    clone_report,
    compute_metrics,
    detect_clones,
    detect_gapped,
    fingerprint_class,
    read_suppressions,
    suppress,
    unit_coverage,
)
from qaforge.source_model import corpus_from_sources, corpus_from_units, default_profile

U = [f"u{i}" for i in range(1, 21)]


def gapped_fixture():
    b = U[:9] + ["x"] + U[10:]
    return corpus_from_units({"A": U, "B": b})


def test_params_validation():
    with pytest.raises(ValueError):
        CloneParams(min_length=1)
    with pytest.raises(ValueError):
        CloneParams(max_gaps=-1)
    with pytest.raises(ValueError):
        CloneParams(max_gap_ratio=1.0)
    assert CloneParams().seed_length == 5
    assert CloneParams(max_gaps=0).seed_length == 10


def test_identical_files():
    corpus = corpus_from_units({"A": U, "B": list(U)})
    classes = detect_clones(corpus, CloneParams())
    assert len(classes) == 1
    c = classes[0]
    assert c.length == 20 and len(c.instances) == 2 and not c.gapped
    m = compute_metrics(classes, corpus)
    assert m.unit_coverage == 100.0 and m.blow_up == 200.0


def test_prefix_fixture():
    corpus = corpus_from_units({"A": U[:15], "B": U[:12]})
    classes = detect_clones(corpus, CloneParams())
    assert [(c.length, len(c.instances)) for c in classes] == [(12, 2)]
    assert classes[0].triples() == brute_maximal_repeats({"A": U[:15], "B": U[:12]}, 10).pop()
    m = compute_metrics(classes, corpus)
    assert m.unit_coverage == pytest.approx(100 * 24 / 27)
    assert m.blow_up == pytest.approx(180.0)


def test_distinct_units_no_clones():
    corpus = corpus_from_units({"A": U, "B": [f"v{i}" for i in range(20)]})
    assert detect_clones(corpus, CloneParams()) == []
    assert detect_gapped(corpus, CloneParams()) == []


def test_empty_corpus():
    corpus = corpus_from_units({})
    assert detect_clones(corpus, CloneParams()) == []
    with pytest.raises(UndefinedMetricsError):
        compute_metrics([], corpus)


def test_table_row_formula():
    assert unit_coverage(3500, 15900) == pytest.approx(22.0, abs=0.5)
    assert blow_up(100, 0) == 100.0


def test_gapped_fixture_matches_oracle():
    corpus = gapped_fixture()
    classes = detect_gapped(corpus, CloneParams(min_length=10, max_gaps=1, max_gap_ratio=0.30))
    assert len(classes) == 1
    c = classes[0]
    assert c.gapped and c.length == 19
    assert all(i.gap_spans == ((9, 9),) for i in c.instances)
    b = U[:9] + ["x"] + U[10:]
    matched, gap, ia, ib = brute_best_gapped(U, b, 10, 0.30)
    assert matched == 19 and gap == 1
    got = {(i.file_id, i.start_unit, i.end_unit, i.gap_spans) for i in c.instances}
    assert got == {("A", *ia), ("B", *ib)}
    gap_len = 1
    assert gap_len / (c.instances[0].end_unit - c.instances[0].start_unit + 1) == pytest.approx(0.05)


def test_gapped_fixture_zero_ratio():
    corpus = gapped_fixture()
    classes = detect_gapped(corpus, CloneParams(min_length=10, max_gaps=1, max_gap_ratio=0.0))
    b = U[:9] + ["x"] + U[10:]
    assert brute_best_gapped(U, b, 10, 0.0)[:2] == (10, 0)
    assert [(c.length, c.gapped) for c in classes] == [(10, False)]
    assert {(i.start_unit, i.end_unit) for i in classes[0].instances} == {(10, 19)}


def test_max_gaps_zero_equals_conventional():
    rng = random.Random(7)
    for _ in range(20):
        corpus = corpus_from_units(random_unit_corpus(rng, 150))
        p = CloneParams(min_length=rng.randint(3, 8), max_gaps=0)
        assert detect_gapped(corpus, p) == detect_clones(corpus, p)


def test_conventional_matches_oracle_small():
    rng = random.Random(11)
    for _ in range(25):
        seqs = random_unit_corpus(rng, 120)
        k = rng.randint(2, 8)
        classes = detect_clones(corpus_from_units(seqs), CloneParams(min_length=max(2, k)))
        assert {c.triples() for c in classes} == brute_maximal_repeats(seqs, max(2, k))


def test_gapped_respects_method_boundaries():
    # same sequence, but the gap crosses into another method in B
    a = U
    b = U[:9] + ["x"] + U[10:]
    corpus = corpus_from_units({"A": a, "B": b})
    split = corpus_from_units({"A": a, "B": b}, scope=None)
    assert detect_gapped(corpus, CloneParams())[0].gapped
    # units outside any method never merge across a gap when boundaries are respected
    assert all(not c.gapped for c in detect_gapped(split, CloneParams()))
    assert detect_gapped(split, CloneParams(respect_method_boundaries=False))[0].gapped


def test_gapped_coverage_superset():
    rng = random.Random(3)
    for _ in range(20):
        corpus = corpus_from_units(random_unit_corpus(rng, 200))
        p = CloneParams(min_length=rng.randint(4, 10))

        def units(classes):
            return {(i.file_id, u) for c in classes for i in c.instances for u in i.matched_units()}

        assert units(detect_clones(corpus, p)) <= units(detect_gapped(corpus, p))


JAVA_A = """class A {
  int run(int count) {
    int total = 0;
    for (int i = 0; i < count; i++) {
      total = total + step(i);
      log(total);
    }
    if (total > 10) {
      total = 10;
    }
    return total;
  }
}
"""


def test_rename_keeps_fingerprint():
    renamed = JAVA_A.replace("total", "acc").replace("count", "n").replace("step", "g").replace("log", "out")
    corpus = corpus_from_sources({"A.java": JAVA_A, "B.java": JAVA_A}, default_profile())
    mutated = corpus_from_sources({"A.java": JAVA_A, "B.java": renamed}, default_profile())
    p = CloneParams(min_length=5)
    before, after = detect_clones(corpus, p), detect_clones(mutated, p)
    assert before and [fingerprint_class(c) for c in before] == [fingerprint_class(c) for c in after]


def test_suppression(tmp_path):
    corpus = corpus_from_units({"A": U, "B": list(U)})
    classes = detect_clones(corpus, CloneParams())
    assert suppress(classes, []) == classes
    sup = tmp_path / "clones.suppress"
    sup.write_text(f"# accepted\n{classes[0].fingerprint}  # generated\nnot-a-fingerprint\n")
    warnings = []
    assert read_suppressions(sup, warnings) == {classes[0].fingerprint}
    assert len(warnings) == 1
    kept = suppress(classes, sup)
    assert kept == []
    assert compute_metrics(kept, corpus).unit_coverage == 0.0


def test_report_shape():
    corpus = corpus_from_sources({"A.java": JAVA_A, "B.java": JAVA_A}, default_profile())
    p = CloneParams(min_length=5)
    classes = detect_clones(corpus, p)
    doc = clone_report(classes, corpus, p, "conventional")
    assert doc["schema"] == "clones.v1"
    inst = doc["classes"][0]["instances"][0]
    assert {"path", "start_line", "end_line", "gaps"} <= set(inst)
    assert doc["metrics"]["unit_coverage"] == 100.0


def test_blow_up_overlap_claims_longest_first():
    # three copies of a 10-unit run, one of which is also part of a longer pair
    x = [f"x{i}" for i in range(10)]
    seqs = {"A": U[:5] + x, "B": U[:5] + x, "C": x}
    corpus = corpus_from_units(seqs)
    classes = detect_clones(corpus, CloneParams(min_length=5))
    m = compute_metrics(classes, corpus)
    # A/B pair of 15 -> 15 redundant; C copy of x -> 10 more
    assert m.redundant_units == 25
    assert m.blow_up == pytest.approx(100 * 40 / 15)


def test_blow_up_tandem_repeat():
    block = [f"b{i}" for i in range(10)]
    corpus = corpus_from_units({"A": block * 4})
    classes = detect_clones(corpus, CloneParams(min_length=10))
    m = compute_metrics(classes, corpus)
    # four adjacent copies: three are redundant
    assert m.redundant_units == 30
    assert m.blow_up == pytest.approx(400.0)
    assert m.unit_coverage == 100.0
