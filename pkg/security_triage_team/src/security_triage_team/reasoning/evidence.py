"""
evidence.py - Collect the contextual dimensions of one finding from the repository.

`gather_dimensions` answers the four questions the taxonomy asks about every
finding (attacker-controlled input, reachability, execution context and the
exploitation condition) using only the read-only repository tools. When the
flagged location cannot be resolved every dimension is `uncertain`.
"""

import logging
import re
from functools import lru_cache
from pathlib import PurePosixPath
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from security_triage_team.errors import BinaryContentError, NavigationError
from security_triage_team.models import Category, ContextDimensions, Finding, FindingRef, TriState, TriValue
from security_triage_team.repo_context import (
    CODE_SUFFIXES,
    DependencySpec,
    EntryPoint,
    FileRole,
    FunctionSpan,
    RepoHandle,
    SearchHit,
    detect_entrypoints,
    entrypoint_reach,
    extract_dependency_files,
    extract_enclosing_function,
    file_role,
    importers_of,
    search_package_usage,
    search_repo,
)

logger = logging.getLogger(__name__)

DEMO_SEGMENTS = frozenset({
    "test", "tests", "demo", "example", "examples", "fixtures", "vendor", "third_party", "attack", "poc",
})
DEMO_PHRASES = ("for testing", "to reproduce")
MAX_ENTRY_HOPS = 2

_INPUT_SOURCES: Tuple[Tuple[str, re.Pattern], ...] = (
    ("command-line arguments (sys.argv)", re.compile(r"\bsys\.argv\b")),
    ("command-line arguments (argparse)", re.compile(r"\bargparse\b|\bArgumentParser\(|\.add_argument\(")),
    ("command-line options (click/typer)", re.compile(r"@click\.(?:option|argument)|\btyper\.(?:Option|Argument)")),
    ("interactive input()", re.compile(r"(?<![\w.])input\(")),
    ("standard input", re.compile(r"\bsys\.stdin\b")),
    ("HTTP request data", re.compile(r"\brequest\.(?:args|form|json|data|files|values|get_json|query_params)\b")),
    ("environment variables", re.compile(r"\bos\.environ\b|\bos\.getenv\(")),
    ("network sockets", re.compile(r"\.recv(?:from)?\(|\bsocket\.socket\(")),
)
_STRING_LITERAL = re.compile(r"""(?P<prefix>[rRbBuUfF]{0,2})(?P<quote>'''|\"\"\"|'|")(?P<body>.*?)(?P=quote)""", re.DOTALL)
_FSTRING_FIELD = re.compile(r"""[fF][rR]?(?:'[^']*\{[^}]+\}[^']*'|"[^"]*\{[^}]+\}[^"]*")""")
_IDENTIFIER = re.compile(r"(?<![\w.])[A-Za-z_]\w*(?:\.\w+)*")
_NON_DATA_WORDS = frozenset({"True", "False", "None", "and", "or", "not", "in", "is", "lambda"})


class EvidenceBundle(BaseModel):
    """Everything the decision logic and the assessment templates need about one finding."""

    model_config = ConfigDict(frozen=True)

    finding_ref_key: str
    location_resolved: bool
    dependency_usage_hits: int = 0
    usage_hits: Tuple[SearchHit, ...] = ()
    manifest: Optional[DependencySpec] = None
    reachable_from_entrypoint: TriState
    research_demo_markers: Tuple[str, ...] = ()
    demo_path: bool = Field(False, description="A path segment marks the file as test, demo or vendored content.")
    dimensions: ContextDimensions
    code_file: bool = False
    span: Optional[FunctionSpan] = None
    flagged_text: str = ""
    input_sources: Tuple[str, ...] = ()
    entry_file: Optional[str] = None
    notes: Tuple[str, ...] = Field(default=(), description="Free-form observations for the reasoning text.")


class RepoSignals(BaseModel):
    """Repository-wide facts shared by every finding of one snapshot."""

    model_config = ConfigDict(frozen=True)

    entrypoints: Tuple[EntryPoint, ...]
    reach: Dict[str, Tuple[int, str]]
    dependencies: Tuple[DependencySpec, ...]
    readme_sentences: Tuple[Tuple[str, str], ...]


@lru_cache(maxsize=16)
def repo_signals(repo: RepoHandle) -> RepoSignals:
    entrypoints = tuple(detect_entrypoints(repo))
    sentences: List[Tuple[str, str]] = []
    for path in repo.file_index:
        if file_role(path) != FileRole.README:
            continue
        try:
            text = repo.text(path)
        except (BinaryContentError, NavigationError, OSError):
            continue
        for sentence in re.split(r"(?<=[.!?])\s+|\n\s*\n", text):
            cleaned = " ".join(sentence.split())
            if cleaned:
                sentences.append((path, cleaned))
    return RepoSignals(
        entrypoints=entrypoints,
        reach=entrypoint_reach(repo, entrypoints, MAX_ENTRY_HOPS),
        dependencies=tuple(extract_dependency_files(repo)),
        readme_sentences=tuple(sentences),
    )


def demo_segments(path: str) -> Tuple[str, ...]:
    return tuple(part for part in PurePosixPath(path).parts[:-1] if part.lower() in DEMO_SEGMENTS)


def _mentions(sentence: str, name: str) -> bool:
    return re.search(rf"(?<![\w.-]){re.escape(name)}(?![\w-])", sentence) is not None


def demo_markers(path: str, signals: RepoSignals) -> Tuple[str, ...]:
    """Path segments and README statements marking a file as a test, demo or vendored asset."""
    pure = PurePosixPath(path)
    markers = [f"path segment '{part}'" for part in demo_segments(path)]
    names = {pure.name.lower()}
    if pure.parent.name:
        names.add(pure.parent.name.lower())
    for readme, sentence in signals.readme_sentences:
        lowered = sentence.lower()
        if any(phrase in lowered for phrase in DEMO_PHRASES) and any(_mentions(lowered, name) for name in names):
            markers.append(f"{readme}: \"{sentence}\"")
    return tuple(markers)


def _call_arguments(lines: List[str], line: int) -> str:
    """The flagged line, extended until its parentheses balance (at most five lines)."""
    text = lines[line - 1]
    depth = text.count("(") - text.count(")")
    extra = line
    while depth > 0 and extra < len(lines) and extra < line + 4:
        text += "\n" + lines[extra]
        depth += lines[extra].count("(") - lines[extra].count(")")
        extra += 1
    return text


def passes_non_literal_data(statement: str) -> bool:
    """True when a call passes variables or interpolated strings rather than literals only."""
    if _FSTRING_FIELD.search(statement):
        return True
    open_paren = statement.find("(")
    if open_paren < 0:
        return False
    arguments = _STRING_LITERAL.sub(" \"\" ", statement[open_paren + 1:])
    if re.search(r"\.format\(|%\s*[\w(]|\+", arguments):
        return True
    arguments = re.sub(r"\b\w+\s*=(?!=)", " ", arguments)
    identifiers = [word for word in _IDENTIFIER.findall(arguments) if word not in _NON_DATA_WORDS]
    return bool(identifiers)


def input_sources_in(repo: RepoHandle, path: str) -> List[str]:
    try:
        text = repo.text(path)
    except (BinaryContentError, NavigationError, OSError):
        return []
    return [label for label, pattern in _INPUT_SOURCES if pattern.search(text)]


def _all_uncertain(finding: Finding, key: str, reason: str) -> EvidenceBundle:
    return EvidenceBundle(
        finding_ref_key=key,
        location_resolved=False,
        reachable_from_entrypoint=TriState.uncertain(reason),
        dimensions=ContextDimensions(
            attacker_controlled_input=TriState.uncertain(reason),
            reachability=TriState.uncertain(reason),
            execution_context=f"Unknown: {reason}",
            exploitation_condition=exploitation_condition(finding),
        ),
        notes=(reason,),
    )


def exploitation_condition(finding: Finding) -> str:
    cwes = set(finding.cwe_ids)
    if finding.category == Category.DEPENDENCY_VULN:
        cve = ", ".join(finding.cve_ids) or finding.finding_id
        installed = f"{finding.package} {finding.version}" if finding.version else finding.package
        return f"The vulnerable code of {installed} ({cve}) must be invoked by the artifact with attacker-influenced data."
    if "CWE-78" in cwes:
        return "An attacker must control text that ends up in the shell command line."
    if "CWE-502" in cwes:
        return "An attacker must be able to supply or replace the serialized data that is loaded."
    if "CWE-95" in cwes:
        return "An attacker must control the expression that is evaluated."
    if "CWE-798" in cwes:
        return ("The embedded credential must protect a live service, trust boundary or signing chain "
                "that an attacker can target.")
    return f"An attacker must reach the flagged code ({finding.finding_id}) with crafted input."


# --- Dependency findings ---

def _manifest_for(finding: Finding, repo: RepoHandle, signals: RepoSignals) -> Optional[DependencySpec]:
    wanted = (finding.package or "").lower().replace("_", "-")
    declared = [spec for spec in signals.dependencies if spec.package.lower().replace("_", "-") == wanted]
    for spec in declared:
        if spec.manifest == finding.file:
            return spec
    if declared:
        return declared[0]
    if finding.file in repo:
        return DependencySpec(manifest=finding.file, package=finding.package or "", version_constraint=None)
    return None


def _dependency_bundle(finding: Finding, repo: RepoHandle, signals: RepoSignals, key: str) -> EvidenceBundle:
    manifest = _manifest_for(finding, repo, signals)
    if manifest is None:
        return _all_uncertain(finding, key, f"{finding.file} is not part of the repository and no manifest "
                                            f"declares {finding.package}")
    pinned = f"{manifest.package}{manifest.version_constraint or ''}"
    hits = tuple(search_package_usage(repo, finding.package or ""))
    markers = demo_markers(manifest.manifest, signals)
    condition = exploitation_condition(finding)

    if not hits:
        note = (f"no import or qualified use of {finding.package} found in any code file "
                f"(only declared as {pinned} in {manifest.manifest})")
        return EvidenceBundle(
            finding_ref_key=key,
            location_resolved=True,
            dependency_usage_hits=0,
            manifest=manifest,
            reachable_from_entrypoint=TriState.no(note),
            research_demo_markers=markers,
            demo_path=bool(demo_segments(manifest.manifest)),
            dimensions=ContextDimensions(
                attacker_controlled_input=TriState.no(f"no {finding.package} API is called, so no input reaches it"),
                reachability=TriState.no(note),
                execution_context=f"{pinned} is listed in {manifest.manifest} but never imported by the code.",
                exploitation_condition=condition,
            ),
        )

    files = sorted({hit.path for hit in hits})
    reached = [path for path in files if path in signals.reach]
    if reached:
        entry = signals.reach[reached[0]][1]
        reach = TriState.yes(f"{finding.package} is used in {reached[0]}, which runs from entry point {entry}")
    elif not signals.entrypoints:
        entry = None
        reach = TriState.uncertain(f"{finding.package} is used in {', '.join(files)} but no entry point was found")
    else:
        entry = None
        reach = TriState.uncertain(
            f"{finding.package} is used in {', '.join(files)}, not imported within {MAX_ENTRY_HOPS} hops "
            f"of an entry point"
        )
    return EvidenceBundle(
        finding_ref_key=key,
        location_resolved=True,
        dependency_usage_hits=len(hits),
        usage_hits=hits,
        manifest=manifest,
        reachable_from_entrypoint=reach,
        research_demo_markers=markers,
        demo_path=bool(demo_segments(manifest.manifest)),
        dimensions=ContextDimensions(
            attacker_controlled_input=TriState.uncertain(
                f"{finding.package} is called at {hits[0].path}:{hits[0].line}; whether attacker data reaches "
                f"the vulnerable API is not established statically"
            ),
            reachability=reach,
            execution_context=(f"{pinned} from {manifest.manifest} is imported or used at {len(hits)} "
                               f"site(s): {', '.join(files)}."),
            exploitation_condition=condition,
        ),
        entry_file=entry,
    )


# --- Code and configuration findings ---

def _code_reachability(finding: Finding, repo: RepoHandle, signals: RepoSignals,
                       is_code: bool) -> Tuple[TriState, Optional[str]]:
    path = finding.file
    if path in signals.reach:
        hops, entry = signals.reach[path]
        if hops == 0:
            kinds = sorted({e.kind.value for e in signals.entrypoints if e.target == path})
            return TriState.yes(f"{path} is itself an entry point ({', '.join(kinds)})"), entry
        return TriState.yes(f"{path} is imported from entry point {entry} within {hops} hop(s)"), entry
    if not is_code:
        name = PurePosixPath(path).name
        refs = [hit for hit in search_repo(repo, name, max_hits=20) if hit.path != path]
        if refs:
            ref = refs[0]
            return TriState.uncertain(
                f"{name} is referenced by {ref.path}:{ref.line}, but no evidence shows it is used during "
                f"normal artifact execution"
            ), None
        return TriState.no(f"{name} is a static file that no script, code or document references"), None
    if not signals.entrypoints:
        return TriState.uncertain("no entry point was detected, so the execution path is unknown"), None
    importers = importers_of(repo, path)
    if importers:
        return TriState.uncertain(
            f"{path} is imported by {', '.join(importers)}, but not within {MAX_ENTRY_HOPS} hops of an entry point"
        ), None
    return TriState.no(f"no entry point runs {path} and no module imports it"), None


def _code_bundle(finding: Finding, repo: RepoHandle, signals: RepoSignals, key: str) -> EvidenceBundle:
    path = finding.file
    if path not in repo:
        return _all_uncertain(finding, key, f"{path} is not part of the repository snapshot")
    try:
        lines = repo.lines(path)
    except BinaryContentError:
        lines = []
    except (NavigationError, OSError) as e:
        return _all_uncertain(finding, key, f"{path} cannot be read ({e})")

    is_code = PurePosixPath(path).suffix.lower() in CODE_SUFFIXES
    line = finding.line if finding.line and finding.line <= len(lines) else None
    span = None
    flagged = ""
    if line is not None:
        flagged = lines[line - 1].strip()
        try:
            span = extract_enclosing_function(repo, path, line)
        except (NavigationError, BinaryContentError) as e:
            logger.debug("No span for %s:%s: %s", path, line, e)

    reach, entry = _code_reachability(finding, repo, signals, is_code)
    sources: List[str] = []
    if not is_code:
        attacker = TriState.no(f"{PurePosixPath(path).name} is a static bundled file, not code that consumes input")
    elif line is None:
        attacker = TriState.uncertain("the finding has no line, so the data flow cannot be inspected")
    elif not passes_non_literal_data(_call_arguments(lines, line)):
        attacker = TriState.no("the flagged statement only uses literal values")
    else:
        sources = input_sources_in(repo, path)
        if entry and entry != path:
            sources += [s for s in input_sources_in(repo, entry) if s not in sources]
        if sources:
            where = path if not entry or entry == path else f"{path} (reached from {entry})"
            attacker = TriState.yes(
                f"the flagged statement passes non-literal data, and {where} reads {', '.join(sources)}; "
                f"that value can alter the executed operation without sanitization"
            )
        else:
            attacker = TriState.uncertain(
                "the flagged statement passes non-literal data, but no external input source was found around it"
            )

    if span is not None and span.kind.value != "module":
        context = f"Inside {span.kind.value} {span.name}() in {path} (lines {span.start_line}-{span.end_line})"
    elif is_code:
        context = f"Module-level code of {path}"
    else:
        context = f"Static file {path} bundled with the repository"
    context += "; " + ("executed on the normal run path." if reach.value == TriValue.YES
                       else "not shown to run during normal execution.")

    return EvidenceBundle(
        finding_ref_key=key,
        location_resolved=True,
        reachable_from_entrypoint=reach,
        research_demo_markers=demo_markers(path, signals),
        demo_path=bool(demo_segments(path)),
        dimensions=ContextDimensions(
            attacker_controlled_input=attacker,
            reachability=reach,
            execution_context=context,
            exploitation_condition=exploitation_condition(finding),
        ),
        code_file=is_code,
        span=span,
        flagged_text=flagged,
        input_sources=tuple(sources),
        entry_file=entry,
    )


def gather_dimensions(finding: Finding, repo: RepoHandle) -> EvidenceBundle:
    """Fill the contextual dimensions of `finding` from repository evidence."""
    key = FindingRef.of(finding).key
    signals = repo_signals(repo)
    if finding.category == Category.DEPENDENCY_VULN:
        return _dependency_bundle(finding, repo, signals, key)
    return _code_bundle(finding, repo, signals, key)
