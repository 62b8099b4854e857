"""Reflexion-model architecture conformance.

Components form a tree; code entities are mapped to the deepest component
whose patterns match. Every dependency between two different components is
judged by the most specific rule, falling back to the model's default policy
(deny). Cycles between components are reported regardless of rules.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fnmatch import fnmatchcase
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping

from .source_model import Corpus

log = logging.getLogger(__name__)

MODEL_SCHEMA = "archmodel.v1"
REPORT_SCHEMA = "archreport.v1"
POLICIES = ("allow", "tolerate", "deny")
DEFECT_CLASSES = ("layer_circumvention", "circular_dependency", "undocumented_common_use", "other")
# tie-break between equally specific rules: the stricter policy wins
_STRICTNESS = {"deny": 2, "tolerate": 1, "allow": 0}


class ArchitectureModelError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class Component:
    name: str
    maps: tuple[str, ...] = ()
    children: tuple[str, ...] = ()
    parent: str | None = None
    layer_rank: int | None = None
    common: bool = False


@dataclass(frozen=True)
class Rule:
    from_component: str
    to_component: str
    policy: str


@dataclass
class ArchitectureModel:
    components: dict[str, Component]
    rules: tuple[Rule, ...] = ()
    default_policy: str = "deny"
    exclusions: tuple[str, ...] = ()

    def ancestors(self, name: str) -> list[str]:
        """``name`` followed by its ancestors up to the root."""
        chain = []
        cur: str | None = name
        while cur is not None:
            chain.append(cur)
            cur = self.components[cur].parent
        return chain

    def depth(self, name: str) -> int:
        return len(self.ancestors(name)) - 1

    def layer_rank(self, name: str) -> int | None:
        for anc in self.ancestors(name):
            rank = self.components[anc].layer_rank
            if rank is not None:
                return rank
        return None

    def is_common(self, name: str) -> bool:
        return any(self.components[a].common for a in self.ancestors(name))

    def to_dict(self) -> dict:
        comps = []
        for c in self.components.values():
            entry: dict = {"name": c.name, "contains": list(c.children), "maps": list(c.maps)}
            if c.layer_rank is not None:
                entry["layer_rank"] = c.layer_rank
            if c.common:
                entry["common"] = True
            comps.append(entry)
        return {
            "schema": MODEL_SCHEMA,
            "components": comps,
            "rules": [{"from": r.from_component, "to": r.to_component, "policy": r.policy} for r in self.rules],
            "default_policy": self.default_policy,
            "exclude": list(self.exclusions),
        }


def parse_architecture(model_file: str | Path | Mapping) -> ArchitectureModel:
    """Read and validate an ``archmodel.v1`` document.

    All problems are collected and raised together as
    :class:`ArchitectureModelError`.
    """
    if isinstance(model_file, Mapping):
        data = model_file
    else:
        try:
            data = json.loads(Path(model_file).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ArchitectureModelError([f"architecture model not found: {model_file}"]) from None
        except json.JSONDecodeError as exc:
            raise ArchitectureModelError([f"architecture model is not valid JSON: {exc}"]) from None

    errors: list[str] = []
    raw = data.get("components")
    if not isinstance(raw, list) or not raw:
        raise ArchitectureModelError(["model defines no components"])
    names = [c.get("name") for c in raw]
    seen: set[str] = set()
    for n in names:
        if not isinstance(n, str) or not n:
            errors.append(f"component without a name: {n!r}")
        elif n in seen:
            errors.append(f"duplicate component {n!r}")
        seen.add(n)

    parents: dict[str, str] = {}
    for c in raw:
        for child in c.get("contains", []):
            if child not in seen:
                errors.append(f"component {c.get('name')!r} contains unknown component {child!r}")
            elif child in parents:
                errors.append(f"component {child!r} has two parents ({parents[child]!r}, {c.get('name')!r})")
            else:
                parents[child] = c.get("name")
    for n in parents:
        cur, hops = n, 0
        while cur in parents and hops <= len(parents):
            cur, hops = parents[cur], hops + 1
        if hops > len(parents):
            errors.append(f"containment cycle through {n!r}")

    components: dict[str, Component] = {}
    for c in raw:
        name = c.get("name")
        if not isinstance(name, str) or name in components:
            continue
        rank = c.get("layer_rank")
        if rank is not None and not isinstance(rank, int):
            errors.append(f"component {name!r}: layer_rank must be an integer")
            rank = None
        components[name] = Component(
            name=name,
            maps=tuple(c.get("maps", ())),
            children=tuple(c.get("contains", ())),
            parent=parents.get(name),
            layer_rank=rank,
            common=bool(c.get("common", False)),
        )

    # sibling components may not share a mapping pattern
    siblings: dict[str | None, list[str]] = defaultdict(list)
    for name, comp in components.items():
        siblings[comp.parent].append(name)
    for group in siblings.values():
        owner: dict[str, str] = {}
        for name in group:
            for pattern in components[name].maps:
                if pattern in owner:
                    errors.append(f"overlapping sibling patterns: {owner[pattern]!r} and {name!r} both map {pattern!r}")
                owner.setdefault(pattern, name)

    rules = []
    for i, r in enumerate(data.get("rules", [])):
        src, dst, policy = r.get("from"), r.get("to"), r.get("policy", "allow")
        for end in (src, dst):
            if end not in components:
                errors.append(f"rule {i}: unknown component {end!r}")
        if policy not in POLICIES:
            errors.append(f"rule {i}: unknown policy {policy!r}")
        rules.append(Rule(src, dst, policy))

    default = data.get("default_policy", "deny")
    if default not in POLICIES:
        errors.append(f"unknown default_policy {default!r}")
    if errors:
        raise ArchitectureModelError(errors)
    return ArchitectureModel(components, tuple(rules), default, tuple(data.get("exclude", ())))


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    kind: str = "import"
    locations: tuple[tuple[str, int], ...] = ()


@dataclass
class DependencyGraph:
    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], Edge] = field(default_factory=dict)

    def add_edge(self, source: str, target: str, kind: str = "import", location: tuple[str, int] | None = None) -> None:
        if source == target:
            return
        self.nodes.update((source, target))
        old = self.edges.get((source, target))
        locs = old.locations if old else ()
        if location is not None:
            locs = tuple(sorted({*locs, location}))
        self.edges[source, target] = Edge(source, target, old.kind if old else kind, locs)


def entity_name(path: str) -> str:
    """``com/app/ui/Login.java`` -> ``com.app.ui.Login``."""
    p = PurePosixPath(path)
    return ".".join(p.with_suffix("").parts)


def extract_dependencies(corpus: Corpus) -> DependencyGraph:
    """One edge per distinct (importing entity, imported entity)."""
    graph = DependencyGraph()
    for source in corpus.files:
        me = entity_name(source.path)
        graph.nodes.add(me)
        for target, line in source.imports:
            graph.add_edge(me, target, "import", (source.path, line))
    return graph


@dataclass
class MappedGraph:
    graph: DependencyGraph
    mapping: dict[str, str]
    unmapped: list[str]
    excluded: list[str]
    diagnostics: list[str] = field(default_factory=list)


def map_entities(graph: DependencyGraph, model: ArchitectureModel) -> MappedGraph:
    """Map each entity to its deepest matching component.

    Raises :class:`ArchitectureModelError` when sibling components both claim
    an entity.
    """
    depth = {name: model.depth(name) for name in model.components}
    mapping: dict[str, str] = {}
    unmapped, excluded, errors, diagnostics = [], [], [], []
    for entity in sorted(graph.nodes):
        if any(fnmatchcase(entity, pat) for pat in model.exclusions):
            excluded.append(entity)
            continue
        hits = [
            name for name, comp in model.components.items()
            if any(fnmatchcase(entity, pat) for pat in comp.maps)
        ]
        if not hits:
            unmapped.append(entity)
            continue
        deepest = max(depth[h] for h in hits)
        best = [h for h in hits if depth[h] == deepest]
        parents = defaultdict(list)
        for h in best:
            parents[model.components[h].parent].append(h)
        for group in parents.values():
            if len(group) > 1:
                errors.append(f"entity {entity!r} matched by sibling components {sorted(group)}")
        if len(best) > 1 and len(parents) > 1:
            diagnostics.append(f"entity {entity!r} matched by {best}; using {best[0]!r}")
        mapping[entity] = best[0]
    if errors:
        raise ArchitectureModelError(errors)
    return MappedGraph(graph, mapping, unmapped, excluded, diagnostics)


@dataclass(frozen=True)
class Violation:
    from_entity: str
    to_entity: str
    from_component: str
    to_component: str
    policy_found: str
    defect_class: str = "other"
    locations: tuple[tuple[str, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "from_entity": self.from_entity,
            "to_entity": self.to_entity,
            "from_component": self.from_component,
            "to_component": self.to_component,
            "policy_found": self.policy_found,
            "defect_class": self.defect_class,
            "locations": [list(loc) for loc in self.locations],
        }


@dataclass
class ConformanceResult:
    violations: list[Violation]
    tolerated: list[Violation]
    allowed: int
    intra_component: int
    unmapped_edges: int


def effective_policy(model: ArchitectureModel, src: str, dst: str) -> tuple[str, bool]:
    """Policy for a dependency from component ``src`` to ``dst``.

    Returns ``(policy, matched)``; ``matched`` is False when the default
    policy applied. A rule matches when its ends are the components or their
    ancestors; deeper ends are more specific.
    """
    src_anc = {a: model.depth(a) for a in model.ancestors(src)}
    dst_anc = {a: model.depth(a) for a in model.ancestors(dst)}
    best = None
    for rule in model.rules:
        if rule.from_component in src_anc and rule.to_component in dst_anc:
            key = (src_anc[rule.from_component] + dst_anc[rule.to_component], _STRICTNESS[rule.policy])
            if best is None or key > best[0]:
                best = (key, rule.policy)
    if best is None:
        return model.default_policy, False
    return best[1], True


def check_conformance(mapped: MappedGraph, model: ArchitectureModel) -> ConformanceResult:
    """Judge every inter-component edge. Output order is deterministic
    (by component pair, then entity pair)."""
    cache: dict[tuple[str, str], tuple[str, bool]] = {}
    violations, tolerated = [], []
    allowed = intra = unmapped = 0
    for (src, dst), edge in sorted(mapped.graph.edges.items()):
        fc, tc = mapped.mapping.get(src), mapped.mapping.get(dst)
        if fc is None or tc is None:
            if src in mapped.unmapped or dst in mapped.unmapped:
                unmapped += 1
            continue
        if fc == tc:
            intra += 1
            continue
        if (fc, tc) not in cache:
            cache[fc, tc] = effective_policy(model, fc, tc)
        policy, matched = cache[fc, tc]
        if policy == "allow":
            allowed += 1
            continue
        v = Violation(src, dst, fc, tc, policy if matched else "unmatched", locations=edge.locations)
        if policy == "tolerate":
            tolerated.append(v)
        else:
            violations.append(v)
    order = lambda v: (v.from_component, v.to_component, v.from_entity, v.to_entity)  # noqa: E731
    return ConformanceResult(sorted(violations, key=order), sorted(tolerated, key=order), allowed, intra, unmapped)


def component_graph(mapped: MappedGraph) -> dict[str, set[str]]:
    graph: dict[str, set[str]] = {c: set() for c in sorted(set(mapped.mapping.values()))}
    for src, dst in mapped.graph.edges:
        fc, tc = mapped.mapping.get(src), mapped.mapping.get(dst)
        if fc is not None and tc is not None and fc != tc:
            graph[fc].add(tc)
    return graph


def detect_cycles(graph: Mapping[str, Iterable[str]]) -> list[list[str]]:
    """Strongly connected components with two or more members, or a single
    member with a self-edge. Iterative Tarjan; each cycle is sorted."""
    succ = {v: sorted(set(ws)) for v, ws in graph.items()}
    for ws in list(succ.values()):
        for w in ws:
            succ.setdefault(w, [])
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    cycles = []
    counter = 0
    for root in sorted(succ):
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            recurse = False
            ws = succ[v]
            while i < len(ws):
                w = ws[i]
                i += 1
                if w not in index:
                    work.append((v, i))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                scc = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    scc.append(w)
                    if w == v:
                        break
                if len(scc) > 1 or v in succ[v]:
                    cycles.append(sorted(scc))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return sorted(cycles)


def classify_violation(v: Violation, model: ArchitectureModel, cycles: Iterable[Iterable[str]] = ()) -> str:
    """First matching class of layer circumvention, circular dependency,
    undocumented use of common functionality, other."""
    src_rank = model.layer_rank(v.from_component)
    dst_rank = model.layer_rank(v.to_component)
    if src_rank is not None and dst_rank is not None and dst_rank - src_rank >= 2:
        return "layer_circumvention"
    for cyc in cycles:
        members = set(cyc)
        if v.from_component in members and v.to_component in members:
            return "circular_dependency"
    if model.is_common(v.to_component):
        return "undocumented_common_use"
    return "other"


@dataclass
class ArchReport:
    violations: list[Violation]
    tolerated: list[Violation]
    cycles: list[list[str]]
    allowed: int
    intra_component: int
    unmapped_edges: int
    unmapped: list[str]
    excluded: list[str]
    diagnostics: list[str]

    @property
    def component_pairs(self) -> list[tuple[str, str]]:
        return sorted({(v.from_component, v.to_component) for v in self.violations})

    @property
    def entity_pairs(self) -> list[tuple[str, str]]:
        return sorted({(v.from_entity, v.to_entity) for v in self.violations})

    def by_defect_class(self) -> dict[str, int]:
        counts = dict.fromkeys(DEFECT_CLASSES, 0)
        for v in self.violations:
            counts[v.defect_class] += 1
        return counts

    def summary(self) -> dict:
        return {
            "component_violations": len(self.component_pairs),
            "entity_violations": len(self.entity_pairs),
            "tolerated": len(self.tolerated),
            "allowed": self.allowed,
            "intra_component": self.intra_component,
            "cycles": len(self.cycles),
            "unmapped_entities": len(self.unmapped),
            "unmapped_edges": self.unmapped_edges,
            "excluded_entities": len(self.excluded),
            "by_defect_class": self.by_defect_class(),
        }

    def to_dict(self, version_label: str = "") -> dict:
        per_pair: dict[tuple[str, str], list[Violation]] = defaultdict(list)
        for v in self.violations:
            per_pair[v.from_component, v.to_component].append(v)
        return {
            "schema": REPORT_SCHEMA,
            "version_label": version_label,
            "summary": self.summary(),
            "component_level": [
                {
                    "from": fc,
                    "to": tc,
                    "policy_found": vs[0].policy_found,
                    "defect_class": vs[0].defect_class,
                    "entity_pairs": len({(v.from_entity, v.to_entity) for v in vs}),
                }
                for (fc, tc), vs in sorted(per_pair.items())
            ],
            "entity_level": [v.to_dict() for v in self.violations],
            "tolerated": [v.to_dict() for v in self.tolerated],
            "cycles": self.cycles,
            "unmapped": self.unmapped,
            "excluded": self.excluded,
            "diagnostics": self.diagnostics,
        }


def analyse_architecture(graph: DependencyGraph, model: ArchitectureModel) -> ArchReport:
    """Map, check, find cycles and classify in one pass."""
    mapped = map_entities(graph, model)
    result = check_conformance(mapped, model)
    comp_graph = component_graph(mapped)
    cycles = detect_cycles(comp_graph)
    classify = lambda v: replace(v, defect_class=classify_violation(v, model, cycles))  # noqa: E731
    diagnostics = list(mapped.diagnostics)
    touched = set()
    for src, targets in comp_graph.items():
        if targets:
            touched.add(src)
            touched.update(targets)
    for name in model.components:
        if not model.components[name].children and name not in touched:
            diagnostics.append(
                f"component {name!r} has no static dependencies; runtime wiring cannot be checked statically"
            )
    return ArchReport(
        violations=[classify(v) for v in result.violations],
        tolerated=[classify(v) for v in result.tolerated],
        cycles=cycles,
        allowed=result.allowed,
        intra_component=result.intra_component,
        unmapped_edges=result.unmapped_edges,
        unmapped=mapped.unmapped,
        excluded=mapped.excluded,
        diagnostics=diagnostics,
    )
