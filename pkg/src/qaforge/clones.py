"""Conventional and gapped clone detection over normalized unit sequences,
plus unit coverage / blow-up metrics and fingerprint suppression."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from bisect import bisect_right
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .source_model import Corpus, Unit
from .suffix_array import maximal_repeats

log = logging.getLogger(__name__)

CLONES_SCHEMA = "clones.v1"
_FINGERPRINT_RE = re.compile(r"^[0-9a-f]{32}$")


class UndefinedMetricsError(ValueError):
    """Raised when metrics are requested for a corpus without units."""


@dataclass(frozen=True)
class CloneParams:
    min_length: int = 10
    max_gaps: int = 1
    max_gap_ratio: float = 0.30
    respect_method_boundaries: bool = True
    # shortest exact match used as a gapped-merge seed; None derives it from
    # min_length and max_gaps
    min_seed_length: int | None = None

    def __post_init__(self) -> None:
        if self.min_length < 2:
            raise ValueError("min_length must be >= 2")
        if self.max_gaps < 0:
            raise ValueError("max_gaps must be >= 0")
        if not 0 <= self.max_gap_ratio < 1:
            raise ValueError("max_gap_ratio must be in [0, 1)")
        if self.min_seed_length is not None and not 2 <= self.min_seed_length <= self.min_length:
            raise ValueError("min_seed_length must be in [2, min_length]")

    @property
    def seed_length(self) -> int:
        if self.min_seed_length is not None:
            return self.min_seed_length
        return max(2, math.ceil(self.min_length / (self.max_gaps + 1)))


@dataclass(frozen=True, order=True)
class CloneInstance:
    file_id: str
    start_unit: int
    end_unit: int
    gap_spans: tuple[tuple[int, int], ...] = ()

    def matched_units(self) -> list[int]:
        gaps = set()
        for lo, hi in self.gap_spans:
            gaps.update(range(lo, hi + 1))
        return [u for u in range(self.start_unit, self.end_unit + 1) if u not in gaps]

    @property
    def span_length(self) -> int:
        return self.end_unit - self.start_unit + 1


@dataclass(frozen=True)
class CloneClass:
    instances: tuple[CloneInstance, ...]
    length: int
    fingerprint: str
    gapped: bool = False

    def triples(self) -> frozenset[tuple[str, int, int]]:
        return frozenset((i.file_id, i.start_unit, i.end_unit) for i in self.instances)


@dataclass(frozen=True)
class CloneMetrics:
    analysed_units: int
    cloned_units: int
    unit_coverage: float
    blow_up: float
    longest_clone: int
    max_instances: int
    redundant_units: int = 0
    class_count: int = 0
    instance_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def unit_coverage(cloned_units: float, analysed_units: float) -> float:
    """Percentage of analysed units that lie in at least one clone instance."""
    if analysed_units <= 0:
        raise UndefinedMetricsError("unit coverage undefined for 0 analysed units")
    return 100.0 * cloned_units / analysed_units


def blow_up(analysed_units: float, redundant_units: float) -> float:
    """Actual size relative to the hypothetical clone-free size, in percent."""
    if analysed_units <= 0:
        raise UndefinedMetricsError("blow-up undefined for 0 analysed units")
    return 100.0 * analysed_units / (analysed_units - redundant_units)


def fingerprint_sequence(units: Sequence[Unit], splits: Sequence[int] = ()) -> str:
    """Hash of a normalized unit sequence; ``splits`` marks gap positions."""
    h = hashlib.blake2b(digest_size=16)
    cut = set(splits)
    for i, unit in enumerate(units):
        if i in cut:
            h.update(b"G;")
        h.update(",".join(map(str, unit.token_ids)).encode("ascii"))
        h.update(b";")
    return h.hexdigest()


class _Index:
    """Concatenated unit-symbol sequence of a corpus with per-file sentinels."""

    def __init__(self, corpus: Corpus):
        self.files = [f for f in corpus.files]
        self.units: list[Unit | None] = []
        self.seq: list[int] = []
        self.starts: list[int] = []
        symbols: dict[tuple[int, ...], int] = {}
        scopes: dict[tuple[int, int], int] = {}
        scope_keys: list[int] = []
        n_files = len(self.files)
        for fi, source in enumerate(self.files):
            self.starts.append(len(self.seq))
            for unit in source.units:
                sym = symbols.get(unit.token_ids)
                if sym is None:
                    sym = symbols[unit.token_ids] = n_files + len(symbols)
                self.seq.append(sym)
                self.units.append(unit)
                if unit.scope is None:
                    scope_keys.append(-1)
                else:
                    scope_keys.append(scopes.setdefault((fi, unit.scope), len(scopes)))
            self.seq.append(fi)
            self.units.append(None)
            scope_keys.append(-1)
        # method occurrence of every position, -1 outside methods and on sentinels
        self.scope_keys = np.asarray(scope_keys, dtype=np.int64)

    def locate(self, pos: int) -> tuple[int, int]:
        fi = bisect_right(self.starts, pos) - 1
        return fi, pos - self.starts[fi]

    def unit(self, pos: int) -> Unit:
        unit = self.units[pos]
        assert unit is not None
        return unit


def _instance(index: _Index, pos: int, length: int) -> CloneInstance:
    fi, local = index.locate(pos)
    return CloneInstance(index.files[fi].path, local, local + length - 1)


def _sort_classes(classes: Iterable[CloneClass]) -> list[CloneClass]:
    return sorted(classes, key=lambda c: (c.fingerprint, c.instances))


def detect_clones(corpus: Corpus, params: CloneParams = CloneParams()) -> list[CloneClass]:
    """Maximal exact repeats of at least ``params.min_length`` units.

    Each class holds every occurrence of its normalized unit sequence. Gap
    parameters are ignored.
    """
    index = _Index(corpus)
    return _sort_classes(_conventional(index, params.min_length))


def _conventional(index: _Index, min_length: int) -> list[CloneClass]:
    classes = []
    for length, positions in maximal_repeats(index.seq, min_length):
        first = positions[0]
        fp = fingerprint_sequence([index.unit(first + k) for k in range(length)])
        instances = tuple(sorted(_instance(index, p, length) for p in positions))
        classes.append(CloneClass(instances, length, fp, gapped=False))
    return classes


@dataclass
class _Segment:
    a: int
    b: int
    length: int
    consumed: bool = field(default=False, compare=False)

    @property
    def a_end(self) -> int:
        return self.a + self.length - 1

    @property
    def b_end(self) -> int:
        return self.b + self.length - 1


def _seed_segments(index: _Index, seed_length: int, within_methods: bool) -> dict[tuple[int, int], list[_Segment]]:
    """Pairwise exact matches, keeping only segments not contained in a longer
    one on the same diagonal; bucketed by (file of a, file of b).

    With ``within_methods`` an occurrence that leaves its method is dropped
    before pairing, since it can never be part of a merged clone.
    """
    scope = index.scope_keys
    ps, qs, ls = [], [], []
    for length, positions in maximal_repeats(index.seq, seed_length):
        pos = np.asarray(positions, dtype=np.int64)
        if within_methods:
            first = scope[pos]
            pos = pos[(first >= 0) & (first == scope[pos + length - 1])]
        if len(pos) < 2:
            continue
        i, j = np.triu_indices(len(pos), 1)
        ps.append(pos[i])
        qs.append(pos[j])
        ls.append(np.full(len(i), length, dtype=np.int64))
    if not ps:
        return {}
    p, q, ln = np.concatenate(ps), np.concatenate(qs), np.concatenate(ls)
    diag = q - p
    # per diagonal by start, longest first; a segment survives when it ends
    # beyond every earlier segment of its diagonal
    order = np.lexsort((-ln, p, diag))
    p, q, ln, diag = p[order], q[order], ln[order], diag[order]
    group = np.cumsum(np.r_[True, diag[1:] != diag[:-1]])
    key = group * (len(index.seq) + 1) + (p + ln - 1)
    keep = key > np.r_[-1, np.maximum.accumulate(key)[:-1]]
    p, q, ln = p[keep], q[keep], ln[keep]
    starts = np.asarray(index.starts, dtype=np.int64)
    fa = np.searchsorted(starts, p, side="right") - 1
    fb = np.searchsorted(starts, q, side="right") - 1
    order = np.lexsort((-ln, q, p, fb, fa))
    buckets: dict[tuple[int, int], list[_Segment]] = defaultdict(list)
    for a, b, length, x, y in zip(p[order].tolist(), q[order].tolist(), ln[order].tolist(),
                                  fa[order].tolist(), fb[order].tolist()):
        buckets[x, y].append(_Segment(a, b, length))
    return buckets


def _same_method(index: _Index, first: int, last: int) -> bool:
    a, b = index.unit(first), index.unit(last)
    return a.scope is not None and a.scope == b.scope


def _chains(index: _Index, segs: list[_Segment], params: CloneParams) -> list[list[_Segment]]:
    ratio = params.max_gap_ratio
    starts = [s.a for s in segs]
    longest = max(s.length for s in segs)
    same_file = index.locate(segs[0].a)[0] == index.locate(segs[0].b)[0]
    chains = []
    for seg in segs:
        if seg.consumed:
            continue
        chain = [seg]
        while len(chain) <= params.max_gaps:
            cur = chain[-1]
            span_a = cur.a_end - seg.a + 1
            span_b = cur.b_end - seg.b + 1
            # a gap can be at most ratio/(1-ratio) of the rest of the clone
            bound = int(ratio / (1 - ratio) * (max(span_a, span_b) + longest)) + 1
            best = None
            lo = bisect_right(starts, cur.a_end)
            hi = bisect_right(starts, cur.a_end + 1 + bound)
            for cand in segs[lo:hi]:
                if cand.b <= cur.b_end or cand.consumed or cand is seg:
                    continue
                gap = max(cand.a - cur.a_end - 1, cand.b - cur.b_end - 1)
                merged = max(cand.a_end - seg.a + 1, cand.b_end - seg.b + 1)
                if gap > ratio * merged:
                    continue
                if same_file and cand.a_end >= seg.b:
                    continue
                if params.respect_method_boundaries and not (
                    _same_method(index, seg.a, cand.a_end) and _same_method(index, seg.b, cand.b_end)
                ):
                    continue
                key = (gap, -cand.length, cand.a, cand.b)
                if best is None or key < best[0]:
                    best = (key, cand)
            if best is None:
                break
            chain.append(best[1])
        if len(chain) > 1:
            for s in chain:
                s.consumed = True
            chains.append(chain)
    return chains


def _chain_instances(index: _Index, chain: list[_Segment]) -> tuple[CloneInstance, CloneInstance]:
    out = []
    for side in ("a", "b"):
        starts = [getattr(s, side) for s in chain]
        fi, first = index.locate(starts[0])
        last_seg = chain[-1]
        end = getattr(last_seg, side) + last_seg.length - 1
        gaps = []
        for prev, nxt in zip(chain, chain[1:]):
            lo = getattr(prev, side) + prev.length
            hi = getattr(nxt, side) - 1
            if lo <= hi:
                gaps.append((lo - starts[0] + first, hi - starts[0] + first))
        out.append(CloneInstance(index.files[fi].path, first, end - starts[0] + first, tuple(gaps)))
    return out[0], out[1]


def _find(parent: dict, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def detect_gapped(corpus: Corpus, params: CloneParams = CloneParams()) -> list[CloneClass]:
    """Clones whose instances may differ by up to ``max_gaps`` gaps.

    Exact seed matches on the same pair of code locations are merged across a
    gap when each gap is at most ``max_gap_ratio`` of the merged clone length
    (gaps included). Conventional classes fully absorbed by a gapped class are
    dropped; with ``max_gaps == 0`` the result equals :func:`detect_clones`.
    """
    index = _Index(corpus)
    conventional = _conventional(index, params.min_length)
    if params.max_gaps == 0:
        return _sort_classes(conventional)

    pairs = []
    for segs in _seed_segments(index, params.seed_length, params.respect_method_boundaries).values():
        for chain in _chains(index, segs, params):
            matched = sum(s.length for s in chain)
            if matched >= params.min_length:
                pairs.append((chain, _chain_instances(index, chain)))

    parent: dict[CloneInstance, CloneInstance] = {}
    for _, (x, y) in pairs:
        parent.setdefault(x, x)
        parent.setdefault(y, y)
        rx, ry = _find(parent, x), _find(parent, y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)
    members: dict[CloneInstance, set[CloneInstance]] = defaultdict(set)
    representative: dict[CloneInstance, list[_Segment]] = {}
    for chain, (x, y) in pairs:
        root = _find(parent, x)
        members[root].update((x, y))
        if root not in representative or (chain[0].a, chain[0].b) < (representative[root][0].a, representative[root][0].b):
            representative[root] = chain

    gapped = []
    for root, insts in members.items():
        chain = representative[root]
        units, splits = [], []
        for s in chain:
            if units:
                splits.append(len(units))
            units.extend(index.unit(s.a + k) for k in range(s.length))
        fp = fingerprint_sequence(units, splits)
        gapped.append(CloneClass(tuple(sorted(insts)), len(units), fp, gapped=True))

    kept = [c for c in conventional if not _absorbed(c, gapped)]
    return _sort_classes(kept + gapped)


def _absorbed(cls: CloneClass, gapped: list[CloneClass]) -> bool:
    """True when some gapped class holds every instance of ``cls`` inside the
    matched units of distinct instances of its own."""
    need = [(i.file_id, set(i.matched_units())) for i in cls.instances]
    for g in gapped:
        if len(g.instances) < len(need):
            continue
        hosts = [(i.file_id, set(i.matched_units())) for i in g.instances]
        options = [
            [h for h, (hf, hu) in enumerate(hosts) if hf == f and units <= hu]
            for f, units in need
        ]
        if all(options) and _has_matching(options):
            return True
    return False


def _has_matching(options: list[list[int]]) -> bool:
    owner: dict[int, int] = {}

    def augment(i: int, seen: set[int]) -> bool:
        for h in options[i]:
            if h in seen:
                continue
            seen.add(h)
            if h not in owner or augment(owner[h], seen):
                owner[h] = i
                return True
        return False

    return all(augment(i, set()) for i in range(len(options)))


def compute_metrics(classes: Sequence[CloneClass], corpus: Corpus) -> CloneMetrics:
    """Unit coverage and blow-up for a set of clone classes.

    Redundant units are resolved longest class first (ties by fingerprint).
    Within a class the instance with the fewest units claimed by earlier
    classes acts as the original; every unit of another instance that no
    earlier class claimed is redundant. Overlapping instances of one class
    (tandem repeats) therefore count their overlap as redundant.
    """
    analysed = corpus.total_units
    if analysed == 0:
        raise UndefinedMetricsError("corpus has no units")
    sizes = {f.path: len(f.units) for f in corpus.files}
    covered = {path: bytearray(n) for path, n in sizes.items()}
    claimed = {path: bytearray(n) for path, n in sizes.items()}
    redundant = 0
    for cls in sorted(classes, key=lambda c: (-c.length, c.fingerprint, c.instances)):
        inst_units = [(i.file_id, i.matched_units()) for i in cls.instances]
        fresh = [sum(1 for u in us if not claimed[f][u]) for f, us in inst_units]
        original = min(range(len(fresh)), key=lambda k: (fresh[k], k))
        newly = set()
        for k, (f, us) in enumerate(inst_units):
            mask = claimed[f]
            for u in us:
                covered[f][u] = 1
                if k != original and not mask[u]:
                    newly.add((f, u))
        redundant += len(newly)
        for f, us in inst_units:
            for u in us:
                claimed[f][u] = 1
    cloned = sum(sum(c) for c in covered.values())
    return CloneMetrics(
        analysed_units=analysed,
        cloned_units=cloned,
        unit_coverage=unit_coverage(cloned, analysed),
        blow_up=blow_up(analysed, redundant),
        longest_clone=max((c.length for c in classes), default=0),
        max_instances=max((len(c.instances) for c in classes), default=0),
        redundant_units=redundant,
        class_count=len(classes),
        instance_count=sum(len(c.instances) for c in classes),
    )


def fingerprint_class(cls: CloneClass) -> str:
    return cls.fingerprint


def read_suppressions(path: str | Path, warnings: list[str] | None = None) -> set[str]:
    """One fingerprint per line; ``#`` starts a comment. Malformed lines are
    skipped with a warning."""
    found = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        entry = line.split("#", 1)[0].strip().lower()
        if not entry:
            continue
        if not _FINGERPRINT_RE.match(entry):
            msg = f"{path}:{lineno}: malformed fingerprint {entry!r} ignored"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        found.add(entry)
    return found


def suppress(classes: Sequence[CloneClass], fingerprints: Iterable[str] | str | Path) -> list[CloneClass]:
    if isinstance(fingerprints, (str, Path)):
        fingerprints = read_suppressions(fingerprints)
    drop = set(fingerprints)
    return [c for c in classes if c.fingerprint not in drop]


def _line_span(corpus_files: dict, path: str, first: int, last: int) -> tuple[int, int]:
    units = corpus_files[path].units
    return units[first].raw_span[0], units[last].raw_span[1]


def clone_report(
    classes: Sequence[CloneClass],
    corpus: Corpus,
    params: CloneParams,
    kind: str,
    metrics: CloneMetrics | None = None,
) -> dict:
    """``clones.v1`` document for one detector run."""
    files = {f.path: f for f in corpus.files}
    if metrics is None and corpus.total_units:
        metrics = compute_metrics(classes, corpus)
    out_classes = []
    for cls in classes:
        instances = []
        for inst in cls.instances:
            start_line, end_line = _line_span(files, inst.file_id, inst.start_unit, inst.end_unit)
            gaps = []
            for lo, hi in inst.gap_spans:
                gl, gh = _line_span(files, inst.file_id, lo, hi)
                gaps.append({"start_unit": lo, "end_unit": hi, "start_line": gl, "end_line": gh})
            instances.append({
                "path": inst.file_id,
                "start_unit": inst.start_unit,
                "end_unit": inst.end_unit,
                "start_line": start_line,
                "end_line": end_line,
                "gaps": gaps,
            })
        out_classes.append({
            "fingerprint": cls.fingerprint,
            "length": cls.length,
            "gapped": cls.gapped,
            "instances": instances,
        })
    return {
        "schema": CLONES_SCHEMA,
        "kind": kind,
        "version_label": corpus.version_label,
        "params": {
            "min_length": params.min_length,
            "max_gaps": params.max_gaps,
            "max_gap_ratio": params.max_gap_ratio,
            "respect_method_boundaries": params.respect_method_boundaries,
            "min_seed_length": params.seed_length,
        },
        "metrics": metrics.to_dict() if metrics else None,
        "classes": out_classes,
    }
