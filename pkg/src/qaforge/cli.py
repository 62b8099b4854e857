"""Command-line front end.

Exit codes: 0 success / gates passed, 1 a hard gate failed, 2 configuration
or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Iterator, Sequence

from . import __version__
from .arch import ArchitectureModelError, analyse_architecture, extract_dependencies, parse_architecture
from .clones import CloneMetrics, CloneParams, clone_report, detect_clones, detect_gapped, read_suppressions, suppress
from .code_metrics import compute_code_metrics
from .findings import (
    FindingsError,
    MappingMismatchError,
    RuleSelector,
    apply_suppressions,
    apply_taxonomy,
    filter_findings,
    findings_document,
    ingest_findings,
    read_finding_suppressions,
    rollup,
)
from .gates import (
    CHANGE_SET,
    AnalysisBundle,
    GateConfigError,
    TrendError,
    build_bundle,
    compute_trends,
    evaluate_gates,
    gate_scopes,
    parse_gates,
    trends_document,
)
from .report import render_dashboard
from .source_model import Corpus, CorpusError, ProfileError, load_corpus, load_profile

log = logging.getLogger("qaforge")

EXIT_OK, EXIT_GATE_FAILED, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


DEFAULT_GATES = Path(__file__).parent / "data" / "default_gates.json"


@dataclass
class RunConfig:
    version_label: str
    out: Path
    root: Path | None = None
    profile: str = "java"
    exclusions: list[str] = field(default_factory=list)
    normalization: str = "identifiers"
    clone_params: CloneParams = field(default_factory=CloneParams)
    clone_suppressions: Path | None = None
    architecture: Path | None = None
    findings_inputs: list[tuple[Path, Path | None]] = field(default_factory=list)
    taxonomy: Path | None = None
    selector: dict = field(default_factory=dict)
    finding_suppressions: Path | None = None
    thresholds: dict = field(default_factory=dict)
    gates: Path | None = None
    change_set: list[str] | None = None
    history: Path | None = None
    sequence: int | None = None

    @classmethod
    def load(cls, path: Path | None, args: argparse.Namespace) -> RunConfig:
        data: dict = {}
        base = Path.cwd()
        if path is not None:
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
            base = path.parent

        def resolve(value: str | None) -> Path | None:
            return None if value in (None, "") else (base / value).resolve()

        corpus = data.get("corpus", {})
        clones = dict(data.get("clones", {}))
        findings = data.get("findings", {})
        label = args.version_label or data.get("version_label")
        if not label:
            raise ConfigError("version label is empty (set version_label or --version-label)")
        out = Path(args.out) if args.out else resolve(data.get("out", "qaforge-out"))
        root = Path(args.root) if getattr(args, "root", None) else resolve(corpus.get("root"))
        change_set = data.get("change_set")
        if isinstance(change_set, str):
            listing = resolve(change_set)
            if listing is None or not listing.is_file():
                raise ConfigError(f"change set file not found: {listing}")
            change_set = [ln.strip() for ln in listing.read_text(encoding="utf-8").splitlines() if ln.strip()]
        try:
            params = CloneParams(
                min_length=int(clones.get("min_length", 10)),
                max_gaps=int(clones.get("max_gaps", 1)),
                max_gap_ratio=float(clones.get("max_gap_ratio", 0.30)),
                respect_method_boundaries=bool(clones.get("respect_method_boundaries", True)),
                min_seed_length=clones.get("min_seed_length"),
            )
        except ValueError as exc:
            raise ConfigError(f"clone parameters: {exc}") from None
        cfg = cls(
            version_label=label,
            out=out,
            root=root,
            profile=args.profile or corpus.get("profile", "java"),
            exclusions=list(corpus.get("exclusions", [])),
            normalization=corpus.get("normalization", "identifiers"),
            clone_params=params,
            clone_suppressions=resolve(clones.get("suppressions")),
            architecture=resolve(data.get("architecture")),
            findings_inputs=[(resolve(i["path"]), resolve(i.get("mapping"))) for i in findings.get("inputs", [])],
            taxonomy=resolve(findings.get("taxonomy")),
            selector=findings.get("selector", {}),
            finding_suppressions=resolve(findings.get("suppressions")),
            thresholds=data.get("metrics", {}).get("thresholds", {}),
            gates=DEFAULT_GATES if data.get("gates") == "default" else resolve(data.get("gates")),
            change_set=change_set,
            history=Path(args.history) if args.history else resolve(data.get("history")),
            sequence=data.get("sequence"),
        )
        cfg.check_files()
        return cfg

    def check_files(self) -> None:
        missing = [
            str(p)
            for p in (
                self.clone_suppressions, self.taxonomy, self.finding_suppressions, self.gates,
                *(i for i, _ in self.findings_inputs), *(m for _, m in self.findings_inputs),
            )
            if p is not None and not p.exists()
        ]
        if missing:
            raise ConfigError("referenced files do not exist: " + ", ".join(missing))


ARTIFACT_FILES = {
    "clones": "clones.json",
    "gapped": "clones-gapped.json",
    "arch": "archreport.json",
    "findings": "findings.json",
    "metrics": "metrics.json",
    "gates": "gates-result.json",
    "trends": "trends.json",
}


def _write_docs(run: Run, docs: dict) -> None:
    for name, doc in docs.items():
        if doc is not None:
            run.write_json(ARTIFACT_FILES[name], doc)


def _dump(doc: object) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class Run:
    """One command invocation: lazily computed analyses over one config."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.written: dict[str, str] = {}
        self._corpus: Corpus | None = None

    def write(self, name: str, content: str) -> Path:
        path = self.cfg.out / name
        path.write_text(content, encoding="utf-8")
        self.written[name] = hashlib.sha256(content.encode("utf-8")).hexdigest()
        return path

    def write_json(self, name: str, doc: object) -> Path:
        return self.write(name, _dump(doc))

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            if self.cfg.root is None:
                raise ConfigError("no corpus root configured (corpus.root or --root)")
            profile = load_profile(self.cfg.profile)
            self._corpus = load_corpus(
                self.cfg.root, profile, self.cfg.exclusions, self.cfg.normalization, self.cfg.version_label
            )
        return self._corpus

    # analyses -------------------------------------------------------------

    def clones(self, corpus: Corpus) -> tuple[dict, dict]:
        params = self.cfg.clone_params
        fingerprints: set[str] = set()
        if self.cfg.clone_suppressions is not None:
            fingerprints = read_suppressions(self.cfg.clone_suppressions)
        conventional = suppress(detect_clones(corpus, params), fingerprints)
        gapped = suppress(detect_gapped(corpus, params), fingerprints)
        return (
            clone_report(conventional, corpus, params, "conventional"),
            clone_report(gapped, corpus, params, "gapped"),
        )

    def arch(self, corpus: Corpus):
        path = self.cfg.architecture
        if path is None or not path.exists():
            raise ConfigError(f"architecture model not found: {path if path else '(none configured)'}")
        model = parse_architecture(path)
        return analyse_architecture(extract_dependencies(corpus), model)

    def findings(self, known_paths: Sequence[str] | None) -> list:
        collected = []
        for report, mapping in self.cfg.findings_inputs:
            collected.extend(ingest_findings(report, mapping, known_paths))
        if self.cfg.taxonomy is not None:
            collected = apply_taxonomy(collected, json.loads(self.cfg.taxonomy.read_text(encoding="utf-8")))
        if self.cfg.finding_suppressions is not None:
            collected = apply_suppressions(collected, read_finding_suppressions(self.cfg.finding_suppressions))
        return filter_findings(collected, RuleSelector.from_dict(self.cfg.selector))

    def bundle(self, corpus: Corpus, scoped: bool = False) -> tuple[AnalysisBundle, dict]:
        docs: dict[str, dict | None] = dict.fromkeys(("clones", "gapped", "arch", "findings", "metrics"))
        clone_metrics = gapped_metrics = arch = code = None
        if corpus.total_units:
            docs["clones"], docs["gapped"] = self.clones(corpus)
            clone_metrics = _metrics_from_doc(docs["clones"])
            gapped_metrics = _metrics_from_doc(docs["gapped"])
        if self.cfg.architecture is not None:
            arch = self.arch(corpus)
            docs["arch"] = arch.to_dict(self.cfg.version_label)
        findings = None
        if self.cfg.findings_inputs:
            paths = [f.path for f in corpus.files]
            findings = self.findings(paths)
            if scoped:
                members = set(paths)
                findings = [f for f in findings if f.path in members]
            docs["findings"] = findings_document(findings)
        code = compute_code_metrics(corpus, self.cfg.thresholds)
        docs["metrics"] = code.to_dict(self.cfg.version_label)
        bundle = build_bundle(
            self.cfg.version_label, clone_metrics, gapped_metrics, arch, findings, code,
            self.cfg.change_set, self.cfg.sequence,
        )
        return bundle, docs

    def scoped_bundle(self, scope: str) -> AnalysisBundle:
        if scope == CHANGE_SET:
            if self.cfg.change_set is None:
                raise ConfigError("a gate is scoped to the change set but no change_set is configured")
            members = set(self.cfg.change_set)
            keep = lambda p: p in members  # noqa: E731
        else:
            keep = lambda p: fnmatchcase(p, scope)  # noqa: E731
        bundle, _ = self.bundle(self.corpus.restrict(keep), scoped=True)
        bundle.version_label = f"{self.cfg.version_label}[{scope}]"
        return bundle


def _metrics_from_doc(doc: dict) -> CloneMetrics | None:
    return CloneMetrics(**doc["metrics"]) if doc.get("metrics") else None


@contextlib.contextmanager
def _locked(out: Path) -> Iterator[None]:
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".qaforge.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_manifest(run: Run, started: datetime, exit_code: int) -> None:
    manifest = {
        "schema": "manifest.v1",
        "command": run.command,
        "qaforge_version": __version__,
        "version_label": run.cfg.version_label,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "exit_code": exit_code,
        "outputs": dict(sorted(run.written.items())),
    }
    (run.cfg.out / "run-manifest.json").write_text(_dump(manifest), encoding="utf-8")


def _load_history(directory: Path) -> list[AnalysisBundle]:
    if not directory.is_dir():
        raise ConfigError(f"history directory not found: {directory}")
    bundles = []
    for path in sorted(directory.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("schema") == "bundle.v1":
            bundles.append(AnalysisBundle.from_dict(doc))
    return _order(bundles)


def _order(bundles: list[AnalysisBundle]) -> list[AnalysisBundle]:
    return sorted(bundles, key=lambda b: (b.sequence is None, b.sequence or 0, b.version_label))


def _archive(run: Run, bundle: AnalysisBundle) -> None:
    history = run.cfg.history
    if history is None:
        return
    history.mkdir(parents=True, exist_ok=True)
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in bundle.version_label)
    (history / f"{safe}.bundle.json").write_text(_dump(bundle.to_dict()), encoding="utf-8")


# commands -----------------------------------------------------------------

def cmd_clones(run: Run) -> int:
    conventional, gapped = run.clones(run.corpus)
    run.write_json("clones.json", conventional)
    run.write_json("clones-gapped.json", gapped)
    for title, doc in (("conventional", conventional), ("gapped", gapped)):
        m = doc["metrics"]
        if m is None:
            print(f"{title}: no units analysed")
            continue
        print(
            f"{title}: {len(doc['classes'])} classes, analysed {m['analysed_units']} units, "
            f"cloned {m['cloned_units']}, coverage {m['unit_coverage']:.1f}%, blow-up {m['blow_up']:.1f}%, "
            f"longest {m['longest_clone']}, most instances {m['max_instances']}"
        )
    return EXIT_OK


def cmd_arch(run: Run) -> int:
    report = run.arch(run.corpus)
    doc = report.to_dict(run.cfg.version_label)
    run.write_json("archreport.json", doc)
    s = doc["summary"]
    print(
        f"architecture: {s['component_violations']} violating component relationships, "
        f"{s['entity_violations']} violating entity relationships, {s['tolerated']} tolerated, "
        f"{s['cycles']} cycles, {s['unmapped_entities']} unmapped entities"
    )
    for d in doc["diagnostics"]:
        print(f"  note: {d}")
    return EXIT_OK


def cmd_findings(run: Run) -> int:
    known = [f.path for f in run.corpus.files] if run.cfg.root is not None else None
    findings = run.findings(known)
    doc = findings_document(findings)
    doc["rollup"] = rollup(findings)
    run.write_json("findings.json", doc)
    r = doc["rollup"]
    print(f"findings: {r['total']} selected ({r['by_class']['bug']} bug, {r['by_class']['smell']} smell, "
          f"{r['by_class']['pedantry']} pedantry)")
    return EXIT_OK


def cmd_metrics(run: Run) -> int:
    doc = compute_code_metrics(run.corpus, run.cfg.thresholds).to_dict(run.cfg.version_label)
    run.write_json("metrics.json", doc)
    a = doc["aggregates"]
    print(
        f"metrics: {a['files']} files, {a['loc']} LOC, {a['sloc']} SLOC, {a['functions']} functions, "
        f"max complexity {a['max_cyclomatic_complexity']}, max nesting {a['max_nested_block_depth']}, "
        f"{len(doc['findings'])} threshold findings"
    )
    return EXIT_OK


def _gate_result(run: Run, bundle: AnalysisBundle) -> dict | None:
    if run.cfg.gates is None:
        return None
    gates = parse_gates(run.cfg.gates)
    for scope in gate_scopes(gates):
        bundle.scopes[scope] = run.scoped_bundle(scope)
    return evaluate_gates(gates, bundle).to_dict()


def cmd_gate(run: Run) -> int:
    if run.cfg.gates is None:
        raise ConfigError("no gate specification configured (gates)")
    bundle, docs = run.bundle(run.corpus)
    result = docs["gates"] = _gate_result(run, bundle)
    _write_docs(run, docs)
    run.write_json("bundle.json", bundle.to_dict())
    _archive(run, bundle)
    for g in result["gates"]:
        print(g["message"])
    print(f"overall: {'PASS' if result['passed'] else 'FAIL'} (exit {result['exit_code']})")
    return result["exit_code"]


def cmd_trend(run: Run) -> int:
    if run.cfg.history is None:
        raise ConfigError("no history directory given (--history)")
    bundles = _load_history(run.cfg.history)
    doc = trends_document(compute_trends(bundles))
    run.write_json("trends.json", doc)
    for s in doc["series"]:
        print(f"{s['metric']}: {' -> '.join(f'{v:g}' for _, v in s['points'])} ({s['direction']})")
    return EXIT_OK


def cmd_report(run: Run) -> int:
    bundle, docs = run.bundle(run.corpus)
    docs["gates"] = _gate_result(run, bundle)
    history = _load_history(run.cfg.history) if run.cfg.history and run.cfg.history.is_dir() else []
    history = [b for b in history if b.version_label != bundle.version_label]
    versions = _order(history + [bundle]) if bundle.sequence is not None else history + [bundle]
    docs["trends"] = trends_document(compute_trends(versions)) if len(versions) >= 2 else None
    _write_docs(run, docs)
    run.write_json("bundle.json", bundle.to_dict())
    run.write("dashboard.html", render_dashboard(run.cfg.version_label, versions, docs))
    _archive(run, bundle)
    print(f"dashboard: {run.cfg.out / 'dashboard.html'} ({len(versions)} version(s))")
    if docs["gates"] is not None:
        return docs["gates"]["exit_code"]
    return EXIT_OK


COMMANDS = {
    "clones": cmd_clones,
    "arch": cmd_arch,
    "findings": cmd_findings,
    "metrics": cmd_metrics,
    "gate": cmd_gate,
    "trend": cmd_trend,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qaforge", description="Static analysis quality toolkit")
    parser.add_argument("--version", action="version", version=f"qaforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "clones": "conventional and gapped clone detection",
        "arch": "architecture conformance against a reflexion model",
        "findings": "normalize, classify and filter external findings",
        "metrics": "code metrics and threshold findings",
        "gate": "evaluate quality gates (exit 1 on hard failure)",
        "trend": "metric trends over archived versions",
        "report": "static HTML dashboard",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--version-label", help="label of the analysed version")
        p.add_argument("--history", help="directory of archived analysis bundles")
        p.add_argument("--profile", help="language profile name or path")
        p.add_argument("--root", help="corpus root directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    started = datetime.now(timezone.utc)
    try:
        cfg = RunConfig.load(args.config, args)
        with _locked(cfg.out):
            run = Run(cfg, args.command)
            try:
                code = COMMANDS[args.command](run)
            except Exception:
                _write_manifest(run, started, EXIT_CONFIG)
                raise
            _write_manifest(run, started, code)
            return code
    except ArchitectureModelError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, GateConfigError, CorpusError, ProfileError, FindingsError,
            MappingMismatchError, TrendError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
