"""Source ingestion: language profiles, tokenization, unit segmentation and
normalization.

A *unit* is one normalized statement. Clone lengths, coverage and blow-up are
all denominated in units.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

log = logging.getLogger(__name__)

CORPUS_SCHEMA = "corpus.v1"
SCHEMES = ("identifiers", "identifiers+literals", "none")
ID_PLACEHOLDER = "$id"
LIT_PLACEHOLDER = "$lit"
PROFILE_DIR_ENV = "QAFORGE_PROFILE_DIR"

# token kind codes, stored one character per token in Unit.kinds
KEYWORD, IDENT, STRING, NUMBER, OPERATOR, COMMENT = "k", "i", "s", "n", "o", "c"


class ProfileError(ValueError):
    pass


class TokenizeError(ValueError):
    pass


class CorpusError(OSError):
    pass


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    end_line: int
    start: int
    end: int


@lru_cache(maxsize=1 << 16)
def token_code(text: str) -> int:
    """Stable 63-bit code for a token text (identical on every machine)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class LanguageProfile:
    name: str
    line_comment: tuple[str, ...]
    block_comment: tuple[tuple[str, str], ...]
    string_delimiters: tuple[str, ...]
    statement_terminators: tuple[str, ...]
    block_open: tuple[str, ...]
    block_close: tuple[str, ...]
    keywords: frozenset[str]
    import_pattern: str
    method_boundary_rule: int = 1
    branch_keywords: frozenset[str] = frozenset()
    operators: tuple[str, ...] = ()
    extensions: tuple[str, ...] = ()
    _lexer: re.Pattern = field(init=False, repr=False, compare=False)
    _imports: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        delimiters = [
            *self.line_comment,
            *(d for pair in self.block_comment for d in pair),
            *self.string_delimiters,
            *self.statement_terminators,
            *self.block_open,
            *self.block_close,
        ]
        errors = []
        if any(not d for d in delimiters):
            errors.append("empty delimiter")
        if len(set(delimiters)) != len(delimiters):
            errors.append("delimiters are not mutually distinct")
        if not self.statement_terminators:
            errors.append("no statement terminator")
        if self.method_boundary_rule < 0:
            errors.append("method_boundary_rule must be >= 0")
        try:
            imports = re.compile(self.import_pattern, re.MULTILINE)
        except re.error as exc:
            errors.append(f"import_pattern does not compile: {exc}")
        else:
            if "target" not in imports.groupindex:
                errors.append("import_pattern needs a (?P<target>...) group")
        if errors:
            raise ProfileError(f"profile {self.name!r}: " + "; ".join(errors))
        object.__setattr__(self, "_imports", imports)
        object.__setattr__(self, "_lexer", self._build_lexer())

    def _build_lexer(self) -> re.Pattern:
        alts = []
        for opener, closer in self.block_comment:
            alts.append(f"(?P<c{len(alts)}>{re.escape(opener)}(?s:.*?){re.escape(closer)})")
        for marker in self.line_comment:
            alts.append(f"(?P<c{len(alts)}>{re.escape(marker)}[^\\n]*)")
        for delim in self.string_delimiters:
            d = re.escape(delim)
            alts.append(f"(?P<s{len(alts)}>{d}(?:\\\\.|(?!{d})[^\\\\\\n])*{d})")
        alts.append(r"(?P<n>\d[\w.]*)")
        alts.append(r"(?P<i>[^\W\d][\w$]*|\$[\w$]*)")
        alts.append(r"(?P<w>\s+)")
        unterminated = [o for o, _ in self.block_comment] + list(self.string_delimiters)
        alts.append("(?P<bad>" + "|".join(re.escape(u) for u in unterminated) + ")")
        ops = sorted(
            {*self.operators, *self.statement_terminators, *self.block_open, *self.block_close},
            key=lambda s: (-len(s), s),
        )
        alts.append("(?P<o>" + "|".join([*(re.escape(o) for o in ops), "."]) + ")")
        return re.compile("|".join(alts))

    @property
    def import_regex(self) -> re.Pattern:
        return self._imports

    @classmethod
    def from_dict(cls, data: dict) -> LanguageProfile:
        try:
            return cls(
                name=data["name"],
                line_comment=tuple(data.get("line_comment", ())),
                block_comment=tuple(tuple(p) for p in data.get("block_comment", ())),
                string_delimiters=tuple(data.get("string_delimiters", ())),
                statement_terminators=tuple(data["statement_terminators"]),
                block_open=tuple(data.get("block_open", ())),
                block_close=tuple(data.get("block_close", ())),
                keywords=frozenset(data.get("keywords", ())),
                import_pattern=data["import_pattern"],
                method_boundary_rule=int(data.get("method_boundary_rule", 1)),
                branch_keywords=frozenset(data.get("branch_keywords", ())),
                operators=tuple(data.get("operators", ())),
                extensions=tuple(data.get("extensions", ())),
            )
        except KeyError as exc:
            raise ProfileError(f"profile missing field {exc}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "extensions": list(self.extensions),
            "line_comment": list(self.line_comment),
            "block_comment": [list(p) for p in self.block_comment],
            "string_delimiters": list(self.string_delimiters),
            "statement_terminators": list(self.statement_terminators),
            "block_open": list(self.block_open),
            "block_close": list(self.block_close),
            "operators": list(self.operators),
            "keywords": sorted(self.keywords),
            "branch_keywords": sorted(self.branch_keywords),
            "import_pattern": self.import_pattern,
            "method_boundary_rule": self.method_boundary_rule,
        }


def load_profile(name_or_path: str | os.PathLike) -> LanguageProfile:
    """Resolve a profile by file path, then ``$QAFORGE_PROFILE_DIR``, then the
    profiles shipped with the package."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.is_file():
        return LanguageProfile.from_dict(json.loads(path.read_text(encoding="utf-8")))
    name = str(name_or_path)
    custom = os.environ.get(PROFILE_DIR_ENV)
    if custom:
        candidate = Path(custom) / f"{name}.json"
        if candidate.is_file():
            return LanguageProfile.from_dict(json.loads(candidate.read_text(encoding="utf-8")))
    shipped = resources.files("qaforge") / "profiles" / f"{name}.json"
    if shipped.is_file():
        return LanguageProfile.from_dict(json.loads(shipped.read_text(encoding="utf-8")))
    raise ProfileError(f"unknown language profile {name!r}")


def tokenize(text: str, profile: LanguageProfile) -> list[Token]:
    """Split source text into tokens; whitespace is dropped, comments kept."""
    newlines = [m.start() for m in re.finditer("\n", text)]
    tokens = []
    keywords = profile.keywords
    for m in profile._lexer.finditer(text):
        group = m.lastgroup
        if group == "w":
            continue
        start, end = m.span()
        line = bisect_right(newlines, start) + 1
        if group == "bad":
            raise TokenizeError(f"unterminated {m.group()!r} at line {line}")
        kind = group[0]
        tok_text = m.group()
        if kind == COMMENT:
            end_line = bisect_right(newlines, end - 1) + 1
        else:
            end_line = line
            if kind == IDENT and tok_text in keywords:
                kind = KEYWORD
        tokens.append(Token(kind, tok_text, line, end_line, start, end))
    return tokens


@dataclass(frozen=True, slots=True)
class Unit:
    file_id: str
    index: int
    tokens: tuple[str, ...]
    kinds: str
    token_ids: tuple[int, ...]
    raw_span: tuple[int, int]
    depth: int = 0
    # ordinal of the enclosing method body within the file, None outside methods
    scope: int | None = None

    @property
    def in_method_scope(self) -> bool:
        return self.scope is not None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "span": list(self.raw_span),
            "depth": self.depth,
            "scope": self.scope,
            "in_method_scope": self.in_method_scope,
            "tokens": list(self.tokens),
            "kinds": self.kinds,
            "token_ids": list(self.token_ids),
        }

    @classmethod
    def from_dict(cls, file_id: str, data: dict) -> Unit:
        return cls(
            file_id=file_id,
            index=data["index"],
            tokens=tuple(data["tokens"]),
            kinds=data["kinds"],
            token_ids=tuple(data["token_ids"]),
            raw_span=tuple(data["span"]),
            depth=data["depth"],
            scope=data["scope"],
        )


def _make_unit(file_id: str, index: int, toks: Sequence[Token], depth: int, scope: int | None) -> Unit:
    texts = tuple(t.text for t in toks)
    return Unit(
        file_id=file_id,
        index=index,
        tokens=texts,
        kinds="".join(t.kind for t in toks),
        token_ids=tuple(token_code(t) for t in texts),
        raw_span=(toks[0].line, toks[-1].end_line),
        depth=depth,
        scope=scope,
    )


def segment_units(
    tokens: Iterable[Token],
    profile: LanguageProfile,
    file_id: str = "",
    warnings: list[str] | None = None,
) -> list[Unit]:
    """Group a token stream into statement units.

    A unit closes after a statement terminator or a block opener; a block
    closer is a unit of its own. Units carry raw token codes; apply
    :func:`normalize` afterwards.
    """
    code = [t for t in tokens if t.kind != COMMENT]
    terminators = set(profile.statement_terminators)
    openers = set(profile.block_open)
    closers = set(profile.block_close)
    rule = profile.method_boundary_rule

    units: list[Unit] = []
    cur: list[Token] = []
    depth = 0
    start_depth = 0
    scope: int | None = None
    scope_count = 0

    def emit(toks: list[Token], at_depth: int) -> None:
        in_scope = scope if at_depth >= rule and scope is not None else None
        units.append(_make_unit(file_id, len(units), toks, at_depth, in_scope))

    if rule == 0:
        scope = 0
        scope_count = 1
    for pos, tok in enumerate(code):
        if not cur:
            start_depth = depth
        structural = tok.kind == OPERATOR
        if structural and tok.text in closers:
            if cur:
                emit(cur, start_depth)
                cur = []
            if depth == 0:
                msg = f"{file_id}: unbalanced {tok.text!r} at line {tok.line}, segmenting rest line-wise"
                if warnings is not None:
                    warnings.append(msg)
                else:
                    log.warning(msg)
                _segment_linewise(code[pos:], file_id, units)
                return units
            emit([tok], depth)
            depth -= 1
            if depth < rule:
                scope = None
            continue
        cur.append(tok)
        if structural and tok.text in terminators:
            emit(cur, start_depth)
            cur = []
        elif structural and tok.text in openers:
            emit(cur, start_depth)
            cur = []
            depth += 1
            if depth == rule:
                scope = scope_count
                scope_count += 1
    if cur:
        emit(cur, start_depth)
    if depth > 0:
        msg = f"{file_id}: {depth} unclosed block(s) at end of file"
        if warnings is not None:
            warnings.append(msg)
        else:
            log.warning(msg)
    return units


def _segment_linewise(code: Sequence[Token], file_id: str, units: list[Unit]) -> None:
    line_toks: list[Token] = []
    for tok in code:
        if line_toks and tok.line != line_toks[-1].line:
            units.append(_make_unit(file_id, len(units), line_toks, 0, None))
            line_toks = []
        line_toks.append(tok)
    if line_toks:
        units.append(_make_unit(file_id, len(units), line_toks, 0, None))


def _normalized_text(text: str, kind: str, scheme: str) -> str:
    if kind == IDENT and scheme != "none":
        return ID_PLACEHOLDER
    if kind in (STRING, NUMBER) and scheme == "identifiers+literals":
        return LIT_PLACEHOLDER
    return text


def normalize(units: Iterable[Unit], scheme: str = "identifiers") -> list[Unit]:
    """Recompute token codes under a normalization scheme.

    ``identifiers`` maps every non-keyword identifier to one placeholder,
    ``identifiers+literals`` additionally maps literals, ``none`` keeps the
    raw codes.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    out = []
    for unit in units:
        ids = tuple(
            token_code(_normalized_text(text, kind, scheme))
            for text, kind in zip(unit.tokens, unit.kinds)
        )
        out.append(unit if ids == unit.token_ids else replace(unit, token_ids=ids))
    return out


@dataclass(frozen=True)
class SourceFile:
    path: str
    units: tuple[Unit, ...]
    line_count: int
    comment_line_count: int
    code_line_count: int
    imports: tuple[tuple[str, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "line_count": self.line_count,
            "comment_line_count": self.comment_line_count,
            "code_line_count": self.code_line_count,
            "imports": [list(i) for i in self.imports],
            "units": [u.to_dict() for u in self.units],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SourceFile:
        return cls(
            path=data["path"],
            units=tuple(Unit.from_dict(data["path"], u) for u in data["units"]),
            line_count=data["line_count"],
            comment_line_count=data["comment_line_count"],
            code_line_count=data["code_line_count"],
            imports=tuple((t, line) for t, line in data["imports"]),
        )


@dataclass(frozen=True)
class Corpus:
    files: tuple[SourceFile, ...]
    profile: LanguageProfile
    version_label: str = ""
    scheme: str = "identifiers"
    warnings: tuple[str, ...] = ()

    @property
    def total_units(self) -> int:
        return sum(len(f.units) for f in self.files)

    def units(self) -> Iterator[Unit]:
        for f in self.files:
            yield from f.units

    def file(self, path: str) -> SourceFile:
        for f in self.files:
            if f.path == path:
                return f
        raise KeyError(path)

    def restrict(self, keep: Callable[[str], bool]) -> Corpus:
        return replace(self, files=tuple(f for f in self.files if keep(f.path)))

    def to_dict(self) -> dict:
        return {
            "schema": CORPUS_SCHEMA,
            "version_label": self.version_label,
            "scheme": self.scheme,
            "profile": self.profile.to_dict(),
            "warnings": list(self.warnings),
            "files": [f.to_dict() for f in self.files],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> Corpus:
        if data.get("schema") != CORPUS_SCHEMA:
            raise ValueError(f"expected schema {CORPUS_SCHEMA}, got {data.get('schema')!r}")
        return cls(
            files=tuple(SourceFile.from_dict(f) for f in data["files"]),
            profile=LanguageProfile.from_dict(data["profile"]),
            version_label=data["version_label"],
            scheme=data["scheme"],
            warnings=tuple(data["warnings"]),
        )


def _line_set(tokens: Iterable[Token]) -> set[int]:
    lines: set[int] = set()
    for t in tokens:
        lines.update(range(t.line, t.end_line + 1))
    return lines


def _extract_imports(text: str, tokens: Sequence[Token], profile: LanguageProfile) -> tuple[tuple[str, int], ...]:
    # blank out comments so commented-out imports are not picked up
    chars = list(text)
    for t in tokens:
        if t.kind == COMMENT:
            for i in range(t.start, t.end):
                if chars[i] != "\n":
                    chars[i] = " "
    clean = "".join(chars)
    found = []
    for m in profile.import_regex.finditer(clean):
        target = m.group("target").replace("/", ".")
        found.append((target, clean.count("\n", 0, m.start("target")) + 1))
    return tuple(found)


def analyse_source(path: str, text: str, profile: LanguageProfile, scheme: str = "identifiers") -> tuple[SourceFile, list[str]]:
    """Tokenize, segment and normalize one file. Raises TokenizeError."""
    warnings: list[str] = []
    tokens = tokenize(text, profile)
    units = normalize(segment_units(tokens, profile, path, warnings), scheme)
    comments = [t for t in tokens if t.kind == COMMENT]
    line_count = text.count("\n") + (1 if text and not text.endswith("\n") else 0)
    source = SourceFile(
        path=path,
        units=tuple(units),
        line_count=line_count,
        comment_line_count=len(_line_set(comments)),
        code_line_count=len(_line_set(t for t in tokens if t.kind != COMMENT)),
        imports=_extract_imports(text, tokens, profile) if profile.import_pattern else (),
    )
    return source, warnings


def _analyse_file(args: tuple[str, str, LanguageProfile, str]) -> tuple[SourceFile | None, list[str]]:
    full, rel, profile, scheme = args
    try:
        text = Path(full).read_text(encoding="utf-8")
        return analyse_source(rel, text, profile, scheme)
    except (TokenizeError, UnicodeDecodeError, OSError) as exc:
        return None, [f"{rel}: skipped ({exc})"]


def discover_files(root: str | os.PathLike, profile: LanguageProfile, exclusions: Sequence[str] = ()) -> list[tuple[str, str]]:
    """List (absolute, relative posix) paths under ``root`` that survive the
    exclusion patterns, in lexicographic order of the relative path."""
    try:
        patterns = [re.compile(p) for p in exclusions]
    except re.error as exc:
        raise ValueError(f"bad exclusion pattern: {exc}") from None
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise CorpusError(f"cannot read corpus root {str(root)!r}")
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in filenames:
            full = Path(dirpath) / name
            rel = full.relative_to(root).as_posix()
            if profile.extensions and full.suffix not in profile.extensions:
                continue
            if any(p.search(rel) for p in patterns):
                continue
            found.append((str(full), rel))
    found.sort(key=lambda pair: pair[1])
    return found


def load_corpus(
    root_path: str | os.PathLike,
    profile: LanguageProfile,
    exclusions: Sequence[str] = (),
    scheme: str = "identifiers",
    version_label: str = "",
    jobs: int = 1,
) -> Corpus:
    """Load every non-excluded source file below ``root_path``.

    Files that fail to tokenize are skipped with a warning recorded on the
    corpus; an unreadable root raises :class:`CorpusError`.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    paths = discover_files(root_path, profile, exclusions)
    work = [(full, rel, profile, scheme) for full, rel in paths]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_analyse_file, work, chunksize=16))
    else:
        results = [_analyse_file(w) for w in work]
    files, warnings = [], []
    for source, warns in results:
        warnings.extend(warns)
        if source is not None:
            files.append(source)
    for w in warnings:
        log.warning(w)
    return Corpus(tuple(files), profile, version_label, scheme, tuple(warnings))


def corpus_from_sources(
    sources: dict[str, str],
    profile: LanguageProfile,
    scheme: str = "identifiers",
    version_label: str = "",
) -> Corpus:
    """Build a corpus from in-memory ``{path: text}``; used by tests and tools."""
    files, warnings = [], []
    for path in sorted(sources):
        try:
            source, warns = analyse_source(path, sources[path], profile, scheme)
        except TokenizeError as exc:
            warnings.append(f"{path}: skipped ({exc})")
            continue
        files.append(source)
        warnings.extend(warns)
    return Corpus(tuple(files), profile, version_label, scheme, tuple(warnings))


def corpus_from_units(
    sequences: dict[str, Sequence[object]],
    profile: LanguageProfile | None = None,
    scope: int | None = 0,
) -> Corpus:
    """Build a synthetic corpus where every symbol becomes a one-token unit.

    Symbols are treated as keywords so normalization leaves them distinct.
    """
    profile = profile or default_profile()
    files = []
    for path in sorted(sequences):
        units = []
        for i, sym in enumerate(sequences[path]):
            text = str(sym)
            units.append(Unit(path, i, (text,), KEYWORD, (token_code(text),), (i + 1, i + 1), 1, scope))
        n = len(units)
        files.append(SourceFile(path, tuple(units), n, 0, n))
    return Corpus(tuple(files), profile, "", "none")


@lru_cache(maxsize=1)
def default_profile() -> LanguageProfile:
    return load_profile("java")
