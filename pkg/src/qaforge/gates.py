"""Quality gates over analysis bundles and metric trends across versions."""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .arch import ArchReport
from .clones import CloneMetrics
from .code_metrics import CodeMetrics
from .findings import Finding, RuleSelector, filter_findings

GATES_SCHEMA = "gates.v1"
BUNDLE_SCHEMA = "bundle.v1"
TRENDS_SCHEMA = "trends.v1"
CHANGE_SET = "change_set"

_OPS = {
    "<": operator.lt, "<=": operator.le, "≤": operator.le,
    "=": operator.eq, "==": operator.eq,
    ">=": operator.ge, "≥": operator.ge, ">": operator.gt,
}


class GateConfigError(ValueError):
    pass


class TrendError(ValueError):
    pass


def load_catalog(path: str | Path | None = None) -> dict[str, dict]:
    """Metric catalog with per-metric polarity (``lower``/``higher``/``neutral``
    is better)."""
    if path is None:
        text = (resources.files("qaforge") / "data" / "metrics.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def polarity_table(catalog: Mapping[str, Mapping] | None = None) -> dict[str, str]:
    catalog = catalog if catalog is not None else load_catalog()
    return {k: v["polarity"] for k, v in catalog.items()}


@dataclass
class AnalysisBundle:
    version_label: str
    metrics: dict[str, float] = field(default_factory=dict)
    findings: list[Finding] = field(default_factory=list)
    scopes: dict[str, AnalysisBundle] = field(default_factory=dict)
    change_set: list[str] | None = None
    sequence: int | None = None

    def to_dict(self) -> dict:
        return {
            "schema": BUNDLE_SCHEMA,
            "version_label": self.version_label,
            "sequence": self.sequence,
            "metrics": dict(sorted(self.metrics.items())),
            "findings": [f.to_dict() for f in self.findings],
            "scopes": {k: v.to_dict() for k, v in sorted(self.scopes.items())},
            "change_set": self.change_set,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> AnalysisBundle:
        if data.get("schema", BUNDLE_SCHEMA) != BUNDLE_SCHEMA:
            raise ValueError(f"expected {BUNDLE_SCHEMA}, got {data.get('schema')!r}")
        findings = []
        for f in data.get("findings", []):
            f = dict(f)
            extras = f.pop("extras", {})
            findings.append(Finding(**f, extras=extras))
        return cls(
            version_label=data["version_label"],
            metrics={k: float(v) for k, v in data.get("metrics", {}).items()},
            findings=findings,
            scopes={k: cls.from_dict(v) for k, v in data.get("scopes", {}).items()},
            change_set=data.get("change_set"),
            sequence=data.get("sequence"),
        )


def build_bundle(
    version_label: str,
    clones: CloneMetrics | None = None,
    gapped: CloneMetrics | None = None,
    arch: ArchReport | None = None,
    findings: Sequence[Finding] | None = None,
    code: CodeMetrics | None = None,
    change_set: Sequence[str] | None = None,
    sequence: int | None = None,
) -> AnalysisBundle:
    """Flatten analysis results into catalog metric keys. Suppressed findings
    are not counted."""
    m: dict[str, float] = {}
    for prefix, cm in (("clone", clones), ("gapped", gapped)):
        if cm is None:
            continue
        m[f"{prefix}_analysed_units"] = cm.analysed_units
        m[f"{prefix}_cloned_units"] = cm.cloned_units
        m[f"{prefix}_coverage"] = cm.unit_coverage
        m[f"{prefix}_blow_up"] = cm.blow_up
        m[f"{prefix}_longest"] = cm.longest_clone
        m[f"{prefix}_max_instances"] = cm.max_instances
        m[f"{prefix}_classes"] = cm.class_count
    if arch is not None:
        s = arch.summary()
        m["arch_violations_component"] = s["component_violations"]
        m["arch_violations_entity"] = s["entity_violations"]
        m["arch_tolerated"] = s["tolerated"]
        m["arch_cycles"] = s["cycles"]
        m["arch_unmapped_entities"] = s["unmapped_entities"]
        for cls, n in s["by_defect_class"].items():
            m[f"arch_{cls}"] = n
    kept: list[Finding] = []
    if findings is not None:
        kept = [f for f in findings if not f.suppressed]
        m["findings_total"] = len(kept)
        for cls in ("bug", "smell", "pedantry"):
            m[f"findings_{cls}"] = sum(1 for f in kept if f.taxonomy_class == cls)
    if code is not None:
        a = code.aggregates
        m["metrics_loc"] = a["loc"]
        m["metrics_sloc"] = a["sloc"]
        m["metrics_comment_ratio"] = a["comment_ratio"]
        m["metrics_functions"] = a["functions"]
        m["metrics_max_complexity"] = a["max_cyclomatic_complexity"]
        m["metrics_max_nesting"] = a["max_nested_block_depth"]
        m["metrics_complexity_breaches"] = a["complexity_breaches"]
        m["metrics_nesting_breaches"] = a["nesting_breaches"]
    return AnalysisBundle(
        version_label=version_label,
        metrics={k: float(v) for k, v in m.items()},
        findings=kept,
        change_set=list(change_set) if change_set is not None else None,
        sequence=sequence,
    )


@dataclass(frozen=True)
class Gate:
    id: str
    metric: str
    op: str
    threshold: float
    hard: bool = True
    scope: str | None = None
    where: Mapping | None = None

    @classmethod
    def from_dict(cls, data: Mapping) -> Gate:
        try:
            return cls(
                id=str(data["id"]),
                metric=str(data["metric"]),
                op=str(data["op"]),
                threshold=float(data["threshold"]),
                hard=bool(data.get("hard", True)),
                scope=data.get("scope"),
                where=data.get("where"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GateConfigError(f"malformed gate {data!r}: {exc}") from None


def parse_gates(spec: str | Path | Mapping) -> list[Gate]:
    if not isinstance(spec, Mapping):
        spec = json.loads(Path(spec).read_text(encoding="utf-8"))
    if spec.get("schema", GATES_SCHEMA) != GATES_SCHEMA:
        raise GateConfigError(f"expected {GATES_SCHEMA}, got {spec.get('schema')!r}")
    gates = [Gate.from_dict(g) for g in spec.get("gates", [])]
    ids = [g.id for g in gates]
    if len(set(ids)) != len(ids):
        raise GateConfigError("duplicate gate ids")
    return gates


@dataclass(frozen=True)
class GateOutcome:
    id: str
    passed: bool
    hard: bool
    value: float | None
    message: str
    config_error: bool = False


@dataclass
class GateResult:
    outcomes: list[GateOutcome]

    @property
    def passed(self) -> bool:
        return not any(o.hard and not o.passed for o in self.outcomes) and not self.config_error

    @property
    def config_error(self) -> bool:
        return any(o.config_error for o in self.outcomes)

    @property
    def warnings(self) -> list[str]:
        return [o.message for o in self.outcomes if not o.hard and not o.passed]

    @property
    def exit_code(self) -> int:
        if self.config_error:
            return 2
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return {
            "schema": "gateresult.v1",
            "passed": self.passed,
            "config_error": self.config_error,
            "exit_code": self.exit_code,
            "gates": [
                {"id": o.id, "passed": o.passed, "hard": o.hard, "value": o.value,
                 "message": o.message, "config_error": o.config_error}
                for o in self.outcomes
            ],
            "warnings": self.warnings,
        }


def _gate_value(gate: Gate, bundle: AnalysisBundle) -> float:
    if gate.metric == "findings_count":
        return float(len(filter_findings(bundle.findings, RuleSelector.from_dict(gate.where))))
    return bundle.metrics[gate.metric]


def evaluate_gate(gate: Gate, bundle: AnalysisBundle, catalog: Mapping | None = None) -> GateOutcome:
    catalog = catalog if catalog is not None else load_catalog()

    def error(msg: str) -> GateOutcome:
        return GateOutcome(gate.id, False, gate.hard, None, f"{gate.id}: config error: {msg}", True)

    if gate.metric not in catalog:
        return error(f"unknown metric {gate.metric!r}")
    if gate.op not in _OPS:
        return error(f"unknown operator {gate.op!r}")
    target = bundle
    if gate.scope is not None:
        if gate.scope not in bundle.scopes:
            return error(f"scope {gate.scope!r} was not analysed")
        target = bundle.scopes[gate.scope]
    try:
        value = _gate_value(gate, target)
    except KeyError:
        return error(f"metric {gate.metric!r} missing from bundle")
    except ValueError as exc:
        return error(str(exc))
    ok = _OPS[gate.op](value, gate.threshold)
    verdict = "pass" if ok else ("FAIL" if gate.hard else "warn")
    where = f" [{gate.scope}]" if gate.scope else ""
    msg = f"{gate.id}: {gate.metric}{where} = {value:g} {gate.op} {gate.threshold:g} -> {verdict}"
    return GateOutcome(gate.id, ok, gate.hard, value, msg)


def evaluate_gates(gates: Iterable[Gate], bundle: AnalysisBundle, catalog: Mapping | None = None) -> GateResult:
    """Overall pass iff no hard gate fails; failing soft gates are warnings.
    A gate with a config error fails and marks the result as misconfigured."""
    catalog = catalog if catalog is not None else load_catalog()
    return GateResult([evaluate_gate(g, bundle, catalog) for g in gates])


def gate_scopes(gates: Iterable[Gate]) -> list[str]:
    return sorted({g.scope for g in gates if g.scope is not None})


@dataclass(frozen=True)
class TrendSeries:
    metric: str
    points: tuple[tuple[str, float], ...]
    polarity: str
    direction: str

    @property
    def delta(self) -> float:
        return self.points[-1][1] - self.points[0][1]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "polarity": self.polarity,
            "direction": self.direction,
            "delta": self.delta,
            "points": [list(p) for p in self.points],
        }


def trend_direction(first: float, last: float, polarity: str, tolerance: float = 1e-9) -> str:
    delta = last - first
    if abs(delta) <= tolerance or polarity == "neutral":
        return "flat"
    better = delta < 0 if polarity == "lower" else delta > 0
    return "improving" if better else "worsening"


def compute_trends(bundles: Sequence[AnalysisBundle], polarity: Mapping[str, str] | None = None) -> list[TrendSeries]:
    """One series per metric present in every bundle; direction compares the
    last version with the first under the metric's polarity."""
    if len(bundles) < 2:
        raise TrendError("need history: at least two versions are required")
    labels = [b.version_label for b in bundles]
    if len(set(labels)) != len(labels):
        raise TrendError(f"version labels are not distinct: {labels}")
    polarity = polarity if polarity is not None else polarity_table()
    common = set(bundles[0].metrics)
    for b in bundles[1:]:
        common &= set(b.metrics)
    series = []
    for metric in sorted(common):
        pol = polarity.get(metric, "neutral")
        points = tuple((b.version_label, b.metrics[metric]) for b in bundles)
        series.append(TrendSeries(metric, points, pol, trend_direction(points[0][1], points[-1][1], pol)))
    return series


def trends_document(series: Sequence[TrendSeries]) -> dict:
    versions = [label for label, _ in series[0].points] if series else []
    return {"schema": TRENDS_SCHEMA, "versions": versions, "series": [s.to_dict() for s in series]}
