"""Normalized bug-pattern findings: ingestion of external reports, taxonomy
classification, rule selection and false-positive suppression."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

FINDINGS_SCHEMA = "findings.v1"
TAXONOMY = ("bug", "smell", "pedantry")
_CORE_FIELDS = (
    "tool", "rule_id", "category", "taxonomy_class", "severity", "confidence",
    "path", "line", "message", "suppressed", "external",
)


class FindingsError(OSError):
    pass


class MappingMismatchError(ValueError):
    def __init__(self, rejected: int, total: int, rejects: list[str]):
        super().__init__(f"mapping mismatch: {rejected} of {total} records rejected")
        self.rejects = rejects


@dataclass(frozen=True)
class Finding:
    tool: str
    rule_id: str
    category: str
    severity: int
    confidence: float
    path: str
    line: int
    message: str = ""
    taxonomy_class: str = "smell"
    suppressed: bool = False
    external: bool = False
    extras: Mapping[str, Any] = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self) -> None:
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity {self.severity} outside 1..5")
        if not 0 <= self.confidence <= 100:
            raise ValueError(f"confidence {self.confidence} outside 0..100")
        if self.taxonomy_class not in TAXONOMY:
            raise ValueError(f"unknown taxonomy class {self.taxonomy_class!r}")

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "rule_id": self.rule_id,
            "category": self.category,
            "taxonomy_class": self.taxonomy_class,
            "severity": self.severity,
            "confidence": self.confidence,
            "path": self.path,
            "line": self.line,
            "message": self.message,
            "suppressed": self.suppressed,
            "external": self.external,
            "extras": dict(sorted(self.extras.items())),
        }


def findings_document(findings: Iterable[Finding]) -> dict:
    return {"schema": FINDINGS_SCHEMA, "findings": [f.to_dict() for f in findings]}


def _map_value(raw: Any, table: Mapping | None, tool: str) -> Any:
    if not table:
        return raw
    # per-tool tables nest one level deeper: {"pmd": {"1": 5}}
    if tool in table and isinstance(table[tool], Mapping):
        table = table[tool]
    key = str(raw).strip().lower()
    for k, v in table.items():
        if str(k).lower() == key:
            return v
    return raw


def _record_to_finding(
    record: Mapping[str, Any],
    config: Mapping,
    known_paths: set[str] | None,
) -> Finding:
    columns = config.get("columns", {})
    defaults = config.get("defaults", {})

    def get(name: str, required: bool = True) -> Any:
        key = columns.get(name, name)
        value = record.get(key)
        if value in (None, ""):
            value = defaults.get(name)
        if value in (None, "") and required:
            raise ValueError(f"missing {name!r}")
        return value

    tool = str(get("tool", False) or config.get("tool") or "unknown")
    severity = _map_value(get("severity"), config.get("severity_map"), tool)
    confidence = get("confidence", False)
    confidence = 100.0 if confidence in (None, "") else _map_value(confidence, config.get("confidence_map"), tool)
    line = get("line", False)
    path = str(get("path"))
    external = bool(get("external", False)) or (known_paths is not None and path not in known_paths)
    taxonomy = get("taxonomy_class", False) or "smell"
    suppressed = get("suppressed", False)
    if isinstance(suppressed, str):
        suppressed = suppressed.strip().lower() in ("1", "true", "yes")
    used = {columns.get(n, n) for n in _CORE_FIELDS}
    extras = {k: v for k, v in record.items() if k not in used and k != "extras"}
    if isinstance(record.get("extras"), Mapping):
        extras.update(record["extras"])
    return Finding(
        tool=tool,
        rule_id=str(get("rule_id")),
        category=str(get("category", False) or "uncategorized"),
        severity=int(severity),
        confidence=float(confidence),
        path=path,
        line=int(line) if line not in (None, "") else 0,
        message=str(get("message", False) or ""),
        taxonomy_class=str(taxonomy),
        suppressed=bool(suppressed),
        external=external,
        extras=extras,
    )


def ingest_findings(
    report_file: str | Path,
    mapping_config: Mapping | str | Path | None = None,
    known_paths: Iterable[str] | None = None,
    rejects: list[str] | None = None,
) -> list[Finding]:
    """Read a ``findings.v1`` JSON report or a CSV report with a column
    mapping. Records that cannot be mapped are itemized in ``rejects``; more
    than half rejected raises :class:`MappingMismatchError`."""
    if isinstance(mapping_config, (str, Path)):
        mapping_config = json.loads(Path(mapping_config).read_text(encoding="utf-8"))
    config = dict(mapping_config or {})
    path = Path(report_file)
    fmt = config.get("format") or ("csv" if path.suffix.lower() == ".csv" else "json")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FindingsError(f"cannot read findings report {str(path)!r}: {exc}") from None

    if fmt == "csv":
        records = list(csv.DictReader(text.splitlines(), delimiter=config.get("delimiter", ",")))
    else:
        doc = json.loads(text) if text.strip() else {"schema": FINDINGS_SCHEMA, "findings": []}
        if isinstance(doc, list):
            records = doc
        elif doc.get("schema", FINDINGS_SCHEMA) != FINDINGS_SCHEMA:
            raise ValueError(f"{path}: expected schema {FINDINGS_SCHEMA}, got {doc.get('schema')!r}")
        else:
            records = doc.get("findings", [])

    paths = set(known_paths) if known_paths is not None else None
    out, bad = [], []
    for i, record in enumerate(records):
        try:
            out.append(_record_to_finding(record, config, paths))
        except (ValueError, TypeError) as exc:
            bad.append(f"{path.name} record {i}: {exc}")
    if rejects is not None:
        rejects.extend(bad)
    for msg in bad:
        log.warning(msg)
    if records and len(bad) * 2 > len(records):
        raise MappingMismatchError(len(bad), len(records), bad)
    return out


def classify(finding: Finding, taxonomy_config: Mapping) -> str:
    """Taxonomy class from the first matching mapping entry.

    Entries may constrain ``tool``, ``rule_id`` and ``category`` with
    shell-style wildcards (case-insensitive); unmatched findings get the
    configured default, ``smell`` unless overridden.
    """
    for entry in taxonomy_config.get("rules", ()):
        ok = True
        for key in ("tool", "rule_id", "category"):
            pattern = entry.get(key)
            if pattern is not None and not fnmatchcase(getattr(finding, key).lower(), str(pattern).lower()):
                ok = False
                break
        if ok:
            return entry["class"]
    return taxonomy_config.get("default", "smell")


def apply_taxonomy(findings: Iterable[Finding], taxonomy_config: Mapping) -> list[Finding]:
    return [replace(f, taxonomy_class=classify(f, taxonomy_config)) for f in findings]


@dataclass(frozen=True)
class RuleSelector:
    include_categories: frozenset[str] = frozenset()
    include_rules: frozenset[str] = frozenset()
    exclude_rules: frozenset[str] = frozenset()
    min_severity: int = 1
    min_confidence: float = 0.0
    path_scopes: tuple[str, ...] = ()
    include_classes: frozenset[str] = frozenset()
    include_tools: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        overlap = self.include_rules & self.exclude_rules
        if overlap:
            raise ValueError(f"rules both included and excluded: {sorted(overlap)}")

    @classmethod
    def from_dict(cls, data: Mapping | None) -> RuleSelector:
        data = data or {}
        return cls(
            include_categories=frozenset(c.lower() for c in data.get("include_categories", ())),
            include_rules=frozenset(data.get("include_rules", ())),
            exclude_rules=frozenset(data.get("exclude_rules", ())),
            min_severity=int(data.get("min_severity", 1)),
            min_confidence=float(data.get("min_confidence", 0)),
            path_scopes=tuple(data.get("path_scopes", ())),
            include_classes=frozenset(data.get("include_classes", ())),
            include_tools=frozenset(t.lower() for t in data.get("include_tools", ())),
        )

    def accepts(self, f: Finding) -> bool:
        if f.suppressed:
            return False
        if self.include_categories and f.category.lower() not in {c.lower() for c in self.include_categories}:
            return False
        if self.include_rules and f.rule_id not in self.include_rules:
            return False
        if f.rule_id in self.exclude_rules:
            return False
        if f.severity < self.min_severity or f.confidence < self.min_confidence:
            return False
        if self.path_scopes and not any(fnmatchcase(f.path, p) for p in self.path_scopes):
            return False
        if self.include_classes and f.taxonomy_class not in self.include_classes:
            return False
        if self.include_tools and f.tool.lower() not in {t.lower() for t in self.include_tools}:
            return False
        return True


def filter_findings(findings: Sequence[Finding], selector: RuleSelector = RuleSelector()) -> list[Finding]:
    """Keep findings accepted by every selector clause; suppressed findings
    are always dropped. Order is preserved."""
    return [f for f in findings if selector.accepts(f)]


@dataclass(frozen=True)
class SuppressionEntry:
    rule_id: str
    path: str
    line: int

    def covers(self, f: Finding, window: int = 2) -> bool:
        return f.rule_id == self.rule_id and f.path == self.path and abs(f.line - self.line) <= window


def read_finding_suppressions(path: str | Path, warnings: list[str] | None = None) -> list[SuppressionEntry]:
    """Lines of ``<rule_id> <path>:<line>``; ``#`` starts a comment."""
    entries = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            rule_id, location = text.split()
            file_path, line = location.rsplit(":", 1)
            entries.append(SuppressionEntry(rule_id, file_path, int(line)))
        except ValueError:
            msg = f"{path}:{lineno}: malformed suppression {text!r} ignored"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
    return entries


def apply_suppressions(findings: Iterable[Finding], entries: Sequence[SuppressionEntry]) -> list[Finding]:
    return [
        replace(f, suppressed=True) if not f.suppressed and any(e.covers(f) for e in entries) else f
        for f in findings
    ]


def rollup(findings: Iterable[Finding]) -> dict:
    """Counts by taxonomy class, category, severity and (tool, rule)."""
    by_class = dict.fromkeys(TAXONOMY, 0)
    by_category: dict[str, int] = {}
    by_severity = {str(s): 0 for s in range(1, 6)}
    by_rule: dict[str, int] = {}
    total = 0
    for f in findings:
        total += 1
        by_class[f.taxonomy_class] += 1
        by_category[f.category.lower()] = by_category.get(f.category.lower(), 0) + 1
        by_severity[str(f.severity)] += 1
        key = f"{f.tool}:{f.rule_id}"
        by_rule[key] = by_rule.get(key, 0) + 1
    return {
        "total": total,
        "by_class": by_class,
        "by_category": dict(sorted(by_category.items())),
        "by_severity": by_severity,
        "by_rule": dict(sorted(by_rule.items())),
    }
