"""Static HTML dashboard assembled from the JSON artifacts of one run."""

from __future__ import annotations

import json
from collections import defaultdict
from typing import Mapping, Sequence

from jinja2 import Environment, PackageLoader, select_autoescape
from markupsafe import Markup

from .gates import AnalysisBundle

TREND_COLUMNS = (
    "clone_coverage", "clone_blow_up", "gapped_coverage", "gapped_blow_up",
    "arch_violations_component", "arch_violations_entity",
    "findings_total", "findings_bug", "metrics_max_complexity", "metrics_max_nesting",
)


def _env() -> Environment:
    return Environment(
        loader=PackageLoader("qaforge", "templates"),
        autoescape=select_autoescape(["html", "j2"]),
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )


def _clone_rows(bundles: Sequence[AnalysisBundle], prefix: str) -> list[dict]:
    rows = []
    for b in bundles:
        m = b.metrics
        if f"{prefix}_coverage" not in m:
            continue
        rows.append({
            "version": b.version_label,
            "analysed": int(m[f"{prefix}_analysed_units"]),
            "cloned": int(m[f"{prefix}_cloned_units"]),
            "blow_up": m[f"{prefix}_blow_up"],
            "coverage": m[f"{prefix}_coverage"],
            "longest": int(m[f"{prefix}_longest"]),
            "instances": int(m[f"{prefix}_max_instances"]),
        })
    return rows


def _arch_rows(bundles: Sequence[AnalysisBundle]) -> list[dict]:
    return [
        {
            "version": b.version_label,
            "component": int(b.metrics["arch_violations_component"]),
            "entity": int(b.metrics["arch_violations_entity"]),
            "tolerated": int(b.metrics.get("arch_tolerated", 0)),
            "cycles": int(b.metrics.get("arch_cycles", 0)),
        }
        for b in bundles
        if "arch_violations_component" in b.metrics
    ]


def _finding_rows(findings_doc: Mapping | None, metrics_doc: Mapping | None) -> list[dict]:
    records = list((findings_doc or {}).get("findings", []))
    records += list((metrics_doc or {}).get("findings", []))
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for f in records:
        if f.get("suppressed"):
            continue
        groups[f["tool"], f["rule_id"], f["taxonomy_class"], f["category"]].append(f)
    return [
        {
            "tool": tool, "rule": rule, "taxonomy_class": cls, "category": cat,
            "count": len(fs), "max_severity": max(f["severity"] for f in fs),
        }
        for (tool, rule, cls, cat), fs in sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    ]


def _embed(doc: Mapping) -> Markup:
    # keep "</script>" out of the embedded payload
    return Markup(json.dumps(doc, sort_keys=True).replace("</", "<\\/"))


def render_dashboard(
    version_label: str,
    bundles: Sequence[AnalysisBundle],
    artifacts: Mapping[str, Mapping | None],
) -> str:
    """Render the dashboard.

    ``bundles`` are the versions to tabulate, oldest first (current run
    last); ``artifacts`` maps artifact names (``clones``, ``gapped``,
    ``arch``, ``findings``, ``metrics``, ``gates``, ``trends``) to their JSON
    documents, any of which may be None.
    """
    trends = artifacts.get("trends")
    series = [s for s in (trends or {}).get("series", []) if s["metric"] in TREND_COLUMNS]
    series.sort(key=lambda s: TREND_COLUMNS.index(s["metric"]))
    values = {s["metric"]: {label: value for label, value in s["points"]} for s in series}
    template = _env().get_template("dashboard.html.j2")
    return template.render(
        version_label=version_label,
        clone_rows={"clone": _clone_rows(bundles, "clone"), "gapped": _clone_rows(bundles, "gapped")},
        arch_rows=_arch_rows(bundles),
        arch=artifacts.get("arch"),
        finding_rows=_finding_rows(artifacts.get("findings"), artifacts.get("metrics")),
        metrics=artifacts.get("metrics"),
        gates=artifacts.get("gates"),
        trends=trends,
        trend_series=series,
        trend_values=values,
        artifacts=[(name, _embed(doc)) for name, doc in sorted(artifacts.items()) if doc is not None],
    )
