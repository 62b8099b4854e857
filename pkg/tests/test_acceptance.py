"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import json
import random
import time

import conftest
from oracles import brute_best_gapped, brute_maximal_repeats, random_arch_case, random_unit_corpus
from qaforge.arch import DependencyGraph, analyse_architecture, parse_architecture
from qaforge.cli import main
from qaforge.clones import CloneParams, clone_report, compute_metrics, detect_clones, detect_gapped, unit_coverage
from qaforge.gates import AnalysisBundle
from qaforge.source_model import corpus_from_units, default_profile, load_corpus
from synthetic import write_java_corpus
from test_arch import check_case


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    conftest.ACCEPTANCE.append(line)
    print(line)


# (system, version, analysed kUnits, cloned kUnits, reported coverage %)
TABLE3 = [
    ("SO1", "I", 15.9, 3.5, 22.2), ("SO1", "II", 25.3, 5.8, 23.0), ("SO1", "III", 32.3, 7.8, 24.0),
    ("SO2", "I", 35.4, 14.3, 40.5), ("SO2", "II", 41.6, 18.9, 45.4), ("SO2", "III", 39.9, 14.6, 36.7),
    ("SO3", "I", 51.7, 9.4, 18.2), ("SO3", "II", 56.8, 8.6, 15.1), ("SO3", "III", 61.6, 8.4, 13.7),
    ("SO4", "I", 8.9, 6.0, 68.0), ("SO4", "II", 22.4, 17.3, 77.6), ("SO4", "III", 38.3, 30.4, 79.4),
    ("SO5", "I", 196.3, 48.7, 24.8), ("SO5", "II", 211.3, 53.4, 25.3), ("SO5", "III", 208.6, 53.2, 25.5),
]
BLOW_UP = {("SO4", "I"): 238.8, ("SO4", "II"): 309.6, ("SO4", "III"): 336.0,
           ("SO3", "I"): 114.5, ("SO3", "II"): 111.2, ("SO3", "III"): 110.0}


def test_criterion_1_coverage_formula():
    start = time.perf_counter()
    misses = []
    for so, version, analysed, cloned, reported in TABLE3:
        got = unit_coverage(cloned * 1000, analysed * 1000)
        if abs(got - reported) > 0.5:
            misses.append(f"{so}-{version}: {got:.2f} vs {reported}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 1.0
    record(1, ok, f"{len(TABLE3) - len(misses)}/15 rows within 0.5pt in {elapsed:.3f}s"
           + (f"; outside: {', '.join(misses)}" if misses else ""))
    assert not misses, misses
    assert elapsed < 1.0


def test_criterion_2_detector_oracle():
    start = time.perf_counter()
    bad = []
    for seed in range(100):
        rng = random.Random(seed)
        seqs = random_unit_corpus(rng, 300)
        k = rng.randint(2, 12)
        corpus = corpus_from_units(seqs)
        p0 = CloneParams(min_length=k, max_gaps=0)
        conventional = detect_clones(corpus, p0)
        if {c.triples() for c in conventional} != brute_maximal_repeats(seqs, k):
            bad.append(f"seed {seed}: oracle mismatch")
        a = json.dumps(clone_report(conventional, corpus, p0, "conventional"), sort_keys=True)
        b = json.dumps(clone_report(detect_gapped(corpus, p0), corpus, p0, "conventional"), sort_keys=True)
        if a != b:
            bad.append(f"seed {seed}: max_gaps=0 differs")
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    record(2, ok, f"100 corpora, {len(bad)} mismatches, {elapsed:.1f}s")
    assert not bad, bad
    assert elapsed < 60


def test_criterion_3_gapped_fixture():
    u = [f"u{i}" for i in range(1, 21)]
    b = u[:9] + ["x"] + u[10:]
    corpus = corpus_from_units({"A": u, "B": b})
    loose = detect_gapped(corpus, CloneParams(min_length=10, max_gaps=1, max_gap_ratio=0.30))
    strict = detect_gapped(corpus, CloneParams(min_length=10, max_gaps=1, max_gap_ratio=0.0))
    oracle = brute_best_gapped(u, b, 10, 0.30)
    oracle0 = brute_best_gapped(u, b, 10, 0.0)
    ok = (
        len(loose) == 1 and loose[0].gapped and loose[0].length == 19 == oracle[0]
        and all(len(i.gap_spans) == 1 and i.gap_spans[0][1] - i.gap_spans[0][0] == 0 for i in loose[0].instances)
        and [(c.length, c.gapped) for c in strict] == [(10, False)] and oracle0[:2] == (10, 0)
        and {(i.start_unit, i.end_unit) for i in strict[0].instances} == {(10, 19)}
    )
    record(3, ok, f"ratio 0.30 -> {[(c.length, c.gapped) for c in loose]}, ratio 0 -> {[(c.length, c.gapped) for c in strict]}")
    assert ok


def test_criterion_4_conformance_oracle():
    start = time.perf_counter()
    failures = 0
    rng = random.Random(4)
    for _ in range(200):
        try:
            check_case(random_arch_case(rng, 50, 500))
        except AssertionError:
            failures += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    record(4, ok, f"200 model/graph pairs, {failures} mismatches, {elapsed:.1f}s")
    assert failures == 0
    assert elapsed < 30


def big_arch_case(rng: random.Random):
    comps = []
    for top in range(10):
        kids = [f"L{top}_{k}" for k in range(4)]
        comps.append({"name": f"L{top}", "contains": kids, "layer_rank": top, "common": top == 9})
        comps += [{"name": k, "maps": [f"sys.l{top}.{k.lower()}.*"]} for k in kids]
    rules = [{"from": f"L{t}", "to": f"L{t + 1}", "policy": "allow"} for t in range(9)]
    rules += [{"from": f"L{t}_0", "to": f"L{t + 2}_1", "policy": "tolerate"} for t in range(8)]
    leaves = [c["name"] for c in comps if "maps" in c]
    entities = [f"sys.l{name[1:].split('_')[0]}.{name.lower()}.E{j}" for name in leaves for j in range(25)]
    graph = DependencyGraph(nodes=set(entities))
    for _ in range(6000):
        a, b = rng.sample(entities, 2)
        graph.add_edge(a, b, location=(a.replace(".", "/") + ".java", rng.randint(1, 300)))
    return {"schema": "archmodel.v1", "components": comps, "rules": rules}, graph


def test_criterion_5_performance(tmp_path):
    lines = write_java_corpus(tmp_path / "src", 100_000, seed=5)
    start = time.perf_counter()
    corpus = load_corpus(tmp_path / "src", default_profile())
    params = CloneParams()
    conventional = detect_clones(corpus, params)
    gapped = detect_gapped(corpus, params)
    compute_metrics(conventional, corpus)
    compute_metrics(gapped, corpus)
    clone_time = time.perf_counter() - start

    model, graph = big_arch_case(random.Random(5))
    start = time.perf_counter()
    report = analyse_architecture(graph, parse_architecture(model))
    arch_time = time.perf_counter() - start
    ok = lines >= 100_000 and clone_time < 300 and arch_time < 10 and len(graph.nodes) == 1000
    record(5, ok, f"clones on {lines} lines / {corpus.total_units} units in {clone_time:.1f}s (< 300s); "
           f"conformance on {len(graph.nodes)} entities / {len(graph.edges)} edges in {arch_time:.2f}s (< 10s); "
           f"{len(report.violations)} violations")
    assert lines >= 100_000
    assert clone_time < 300
    assert arch_time < 10


def test_criterion_6_trends(tmp_path):
    history = tmp_path / "history"
    history.mkdir()
    for seq, (so, version, analysed, cloned, _) in enumerate(TABLE3):
        if so not in ("SO3", "SO4"):
            continue
        metrics = {"clone_coverage": unit_coverage(cloned * 1000, analysed * 1000), "clone_blow_up": BLOW_UP[so, version]}
        bundle = AnalysisBundle(version, metrics, sequence=seq % 3)
        (history / so).mkdir(exist_ok=True)
        (history / so / f"{version}.bundle.json").write_text(json.dumps(bundle.to_dict()))
    directions = {}
    for so in ("SO3", "SO4"):
        out = tmp_path / f"out-{so}"
        code = main(["trend", "--history", str(history / so), "--out", str(out), "--version-label", "trend"])
        assert code == 0
        doc = json.loads((out / "trends.json").read_text())
        assert doc["versions"] == ["I", "II", "III"]
        directions[so] = {s["metric"]: s["direction"] for s in doc["series"]}
    ok = directions["SO3"]["clone_coverage"] == "improving" and directions["SO4"]["clone_blow_up"] == "worsening"
    record(6, ok, f"SO3 coverage {directions['SO3']['clone_coverage']}, SO4 blow-up {directions['SO4']['clone_blow_up']}")
    assert ok


def test_criterion_7_property_suites():
    import test_properties

    before = sum(test_properties.CASES.values())
    start = time.perf_counter()
    failed = []
    for prop in test_properties.PROPERTIES:
        try:
            prop()
        except Exception as exc:  # noqa: BLE001
            failed.append(f"{prop.__name__}: {type(exc).__name__}")
    cases = sum(test_properties.CASES.values()) - before
    ok = not failed and cases >= 1000
    record(7, ok, f"{len(test_properties.PROPERTIES)} suites, {cases} generated cases, "
           f"{len(failed)} failing, {time.perf_counter() - start:.1f}s")
    assert not failed, failed
    assert cases >= 1000
