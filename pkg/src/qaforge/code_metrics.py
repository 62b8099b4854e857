"""Size, comment, complexity and nesting metrics computed from a segmented
corpus, with threshold breaches reported as native findings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import groupby
from typing import Mapping

from .findings import Finding
from .source_model import KEYWORD, Corpus, SourceFile, Unit

# maxima used by the shipped defaults
DEFAULT_THRESHOLDS = {"max_cyclomatic_complexity": 10, "max_nested_block_depth": 5}


@dataclass(frozen=True)
class FileMetrics:
    path: str
    loc: int
    sloc: int
    comment_lines: int
    comment_ratio: float


@dataclass(frozen=True)
class FunctionMetrics:
    path: str
    name: str
    start_line: int
    end_line: int
    cyclomatic_complexity: int
    max_nested_block_depth: int
    parameter_count: int
    length_units: int


@dataclass
class CodeMetrics:
    files: list[FileMetrics]
    functions: list[FunctionMetrics]
    aggregates: dict
    findings: list[Finding] = field(default_factory=list)

    def to_dict(self, version_label: str = "") -> dict:
        return {
            "schema": "metrics.v1",
            "version_label": version_label,
            "aggregates": self.aggregates,
            "files": [asdict(f) for f in self.files],
            "functions": [asdict(f) for f in self.functions],
            "findings": [f.to_dict() for f in self.findings],
        }


def _header_signature(header: Unit | None) -> tuple[str, int]:
    if header is None:
        return "<anonymous>", 0
    toks, kinds = header.tokens, header.kinds
    try:
        open_at = toks.index("(")
    except ValueError:
        return "<block>", 0
    name = "<anonymous>"
    for k in range(open_at - 1, -1, -1):
        if kinds[k] in ("i", KEYWORD) and toks[k] not in ("(", ")"):
            name = toks[k]
            break
    depth, commas, seen = 0, 0, False
    for tok in toks[open_at:]:
        if tok in ("(", "<", "["):
            depth += 1
            continue
        if tok in (")", ">", "]"):
            depth -= 1
            if depth == 0:
                break
            continue
        if depth == 1 and tok == ",":
            commas += 1
        seen = True
    return name, (commas + 1 if seen else 0)


def _function_metrics(source: SourceFile, rule: int, branch: frozenset[str]) -> list[FunctionMetrics]:
    out = []
    in_scope = [u for u in source.units if u.scope is not None]
    for _, group in groupby(in_scope, key=lambda u: u.scope):
        units = list(group)
        first = units[0]
        header = source.units[first.index - 1] if first.index > 0 else None
        name, params = _header_signature(header)
        complexity = 1 + sum(
            1
            for u in units
            for text, kind in zip(u.tokens, u.kinds)
            if kind == KEYWORD and text in branch
        )
        nesting = max(u.depth for u in units) - rule
        start = header.raw_span[0] if header is not None else first.raw_span[0]
        out.append(FunctionMetrics(
            path=source.path,
            name=name,
            start_line=start,
            end_line=units[-1].raw_span[1],
            cyclomatic_complexity=complexity,
            max_nested_block_depth=max(nesting, 0),
            parameter_count=params,
            length_units=len(units),
        ))
    return out


def _native(fn: FunctionMetrics, rule_id: str, message: str) -> Finding:
    return Finding(
        tool="native",
        rule_id=rule_id,
        category="maintainability",
        severity=3,
        confidence=100.0,
        path=fn.path,
        line=fn.start_line,
        message=f"{fn.name}: {message}",
        taxonomy_class="smell",
    )


def compute_code_metrics(corpus: Corpus, thresholds: Mapping[str, int] | None = None) -> CodeMetrics:
    """Per-file and per-function metrics.

    Cyclomatic complexity is 1 plus the number of branch keywords declared by
    the language profile; short-circuit operators do not count. Nesting depth
    counts blocks opened inside a function body.
    """
    limits = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    profile = corpus.profile
    files, functions = [], []
    for source in corpus.files:
        loc = source.line_count
        files.append(FileMetrics(
            path=source.path,
            loc=loc,
            sloc=source.code_line_count,
            comment_lines=source.comment_line_count,
            comment_ratio=source.comment_line_count / loc if loc else 0.0,
        ))
        functions.extend(_function_metrics(source, profile.method_boundary_rule, profile.branch_keywords))

    findings = []
    max_cc = limits["max_cyclomatic_complexity"]
    max_depth = limits["max_nested_block_depth"]
    for fn in functions:
        if fn.cyclomatic_complexity > max_cc:
            findings.append(_native(fn, "max-cyclomatic-complexity", f"cyclomatic complexity {fn.cyclomatic_complexity} > {max_cc}"))
        if fn.max_nested_block_depth > max_depth:
            findings.append(_native(fn, "max-nested-block-depth", f"nested block depth {fn.max_nested_block_depth} > {max_depth}"))

    loc = sum(f.loc for f in files)
    comment_lines = sum(f.comment_lines for f in files)
    aggregates = {
        "files": len(files),
        "loc": loc,
        "sloc": sum(f.sloc for f in files),
        "comment_ratio": comment_lines / loc if loc else 0.0,
        "functions": len(functions),
        "max_cyclomatic_complexity": max((f.cyclomatic_complexity for f in functions), default=0),
        "mean_cyclomatic_complexity": (
            sum(f.cyclomatic_complexity for f in functions) / len(functions) if functions else 0.0
        ),
        "max_nested_block_depth": max((f.max_nested_block_depth for f in functions), default=0),
        "max_parameter_count": max((f.parameter_count for f in functions), default=0),
        "complexity_breaches": sum(1 for f in findings if f.rule_id == "max-cyclomatic-complexity"),
        "nesting_breaches": sum(1 for f in findings if f.rule_id == "max-nested-block-depth"),
    }
    return CodeMetrics(files, functions, aggregates, findings)
