"""
repo_context.py - Read-only navigation of an artifact repository snapshot.

The `RepoHandle` freezes the list of files of a repository once, at
construction time. Every navigation tool below works against that snapshot,
never writes to disk, and refuses paths that leave the repository root
(absolute paths, `..` components, or symlinks resolving elsewhere).

The nine tools an analyst needs are module-level functions returning
structured values; `security_triage_team.tools.repo_tools` wraps them as
crewAI tools that render plain-text observations for a model.
"""

import fnmatch
import json
import logging
import os
import re
import tomllib
from enum import Enum
from functools import cached_property
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from security_triage_team.errors import BinaryContentError, NavigationError, PatternError
from security_triage_team.models import ScanWarning

try:
    import tree_sitter_python as ts_python
    from tree_sitter import Language, Node, Parser

    TREE_SITTER_AVAILABLE = True
except ImportError:
    TREE_SITTER_AVAILABLE = False
    Node = object  # type: ignore[misc,assignment]

logger = logging.getLogger(__name__)

DEFAULT_IGNORE_RULES: Tuple[str, ...] = (
    ".git", ".hg", ".svn", "__pycache__", "*.pyc", ".venv", "venv",
    "node_modules", ".tox", ".mypy_cache", ".pytest_cache", ".DS_Store",
)
BINARY_SNIFF_BYTES = 8 * 1024
DEFAULT_MAX_FILE_BYTES = 2 * 1024 * 1024
TRUNCATION_MARKER = "\n... [truncated at {limit} bytes]"

PYTHON_SUFFIXES = {".py", ".pyi", ".pyw"}
JS_SUFFIXES = {".js", ".jsx", ".mjs", ".cjs", ".ts", ".tsx"}
CODE_SUFFIXES = PYTHON_SUFFIXES | JS_SUFFIXES

# distribution name -> import name, where they differ
KNOWN_IMPORT_NAMES: Dict[str, Tuple[str, ...]] = {
    "pyyaml": ("yaml",),
    "scikit-learn": ("sklearn",),
    "pillow": ("PIL",),
    "beautifulsoup4": ("bs4",),
    "opencv-python": ("cv2",),
    "opencv-python-headless": ("cv2",),
    "python-dateutil": ("dateutil",),
    "pycryptodome": ("Crypto",),
    "protobuf": ("google.protobuf",),
    "msgpack-python": ("msgpack",),
}


# --- Records ---

class SpanKind(str, Enum):
    FUNCTION = "function"
    METHOD = "method"
    CLASS = "class"
    MODULE = "module"


class EntryKind(str, Enum):
    MAIN_GUARD = "main_guard"
    SCRIPT_WITH_CLI_PARSE = "script_with_cli_parse"
    MAKEFILE_TARGET = "makefile_target"
    DOCUMENTED_RUN_COMMAND = "documented_run_command"


class FileRole(str, Enum):
    README = "readme"
    LICENSE = "license"
    DEPENDENCY_MANIFEST = "dependency_manifest"
    CONTAINER_BUILD = "container_build"
    BUILD_SCRIPT = "build_script"


class Snippet(BaseModel):
    model_config = ConfigDict(frozen=True)

    file: str
    start_line: int
    end_line: int
    lines: Tuple[str, ...]

    @model_validator(mode="after")
    def _window_consistent(self) -> "Snippet":
        if not 1 <= self.start_line <= self.end_line:
            raise ValueError("snippet window must satisfy 1 <= start_line <= end_line")
        if len(self.lines) != self.end_line - self.start_line + 1:
            raise ValueError("snippet line count does not match its window")
        return self

    def render(self) -> str:
        width = len(str(self.end_line))
        body = "\n".join(
            f"{number:>{width}} | {text}"
            for number, text in zip(range(self.start_line, self.end_line + 1), self.lines)
        )
        return f"{self.file}:{self.start_line}-{self.end_line}\n{body}"


class EntryPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    file: str
    kind: EntryKind
    evidence: str
    line: int
    target: Optional[str] = None


class DependencySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    manifest: str
    package: str
    version_constraint: Optional[str] = None


class FunctionSpan(BaseModel):
    model_config = ConfigDict(frozen=True)

    file: str
    name: str
    start_line: int
    end_line: int
    kind: SpanKind
    approximate: bool = False

    def contains(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line


class SearchHit(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    line: int
    text: str


class ImportantFile(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    role: FileRole


# --- Snapshot ---

def split_lines(text: str) -> List[str]:
    """Lines split on line feeds only, with a trailing carriage return dropped, as scanners number them."""
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") else line for line in lines]


def _is_ignored(parts: Sequence[str], ignore_rules: Sequence[str]) -> bool:
    return any(fnmatch.fnmatch(part, rule) for part in parts for rule in ignore_rules)


class RepoHandle:
    """
    Immutable snapshot of a repository's file list.

    The file index is built once; files created later are invisible and
    files deleted later surface as navigation errors on read.
    """

    def __init__(
        self,
        root: Path,
        file_index: Tuple[str, ...],
        ignore_rules: Tuple[str, ...] = DEFAULT_IGNORE_RULES,
        max_file_bytes: int = DEFAULT_MAX_FILE_BYTES,
    ):
        self._root = root
        self._file_index = file_index
        self._index_set = frozenset(file_index)
        self._ignore_rules = ignore_rules
        self._max_file_bytes = max_file_bytes

    @classmethod
    def open(
        cls,
        root: os.PathLike | str,
        ignore_rules: Iterable[str] = DEFAULT_IGNORE_RULES,
        max_file_bytes: int = DEFAULT_MAX_FILE_BYTES,
    ) -> "RepoHandle":
        """
        Snapshot the repository under `root`.

        Raises:
            NavigationError: If `root` is not a readable directory.
        """
        resolved = Path(root).resolve()
        if not resolved.is_dir():
            raise NavigationError(f"Repository root {resolved} is not a directory.")
        rules = tuple(ignore_rules)
        index: List[str] = []
        for dirpath, dirnames, filenames in os.walk(resolved, followlinks=False):
            current = Path(dirpath)
            rel_dir = current.relative_to(resolved)
            dirnames[:] = sorted(
                d for d in dirnames
                if not _is_ignored((d,), rules) and not (current / d).is_symlink()
            )
            for name in sorted(filenames):
                rel_parts = rel_dir.parts + (name,)
                if _is_ignored(rel_parts, rules):
                    continue
                full = current / name
                if full.is_symlink():
                    target = full.resolve()
                    if not target.is_relative_to(resolved) or not target.is_file():
                        logger.warning("Skipping symlink %s pointing outside the repository", full)
                        continue
                index.append(PurePosixPath(*rel_parts).as_posix())
        return cls(resolved, tuple(sorted(set(index))), rules, max_file_bytes)

    @property
    def root(self) -> Path:
        return self._root

    @property
    def file_index(self) -> Tuple[str, ...]:
        return self._file_index

    @property
    def ignore_rules(self) -> Tuple[str, ...]:
        return self._ignore_rules

    @property
    def max_file_bytes(self) -> int:
        return self._max_file_bytes

    def __contains__(self, path: str) -> bool:
        return path in self._index_set

    def normalize(self, path: str) -> str:
        """Turn a caller-supplied path into an index key, rejecting escapes."""
        text = str(path).replace("\\", "/").strip()
        if not text:
            raise NavigationError("Empty path.")
        candidate = PurePosixPath(text)
        if candidate.is_absolute():
            try:
                candidate = PurePosixPath(Path(text).resolve().relative_to(self._root).as_posix())
            except ValueError:
                raise NavigationError(f"Path {path!r} is outside the repository root.")
        if ".." in candidate.parts:
            raise NavigationError(f"Path {path!r} contains '..' components.")
        return candidate.as_posix()

    def resolve(self, path: str) -> Path:
        """Map an index key to its on-disk location, enforcing confinement."""
        key = self.normalize(path)
        if key not in self._index_set:
            raise NavigationError(f"Path {path!r} is not part of the repository snapshot.")
        full = (self._root / key).resolve()
        if not full.is_relative_to(self._root):
            raise NavigationError(f"Path {path!r} resolves outside the repository root.")
        if not full.is_file():
            raise NavigationError(f"Path {path!r} no longer exists.")
        return full

    def read_bytes(self, path: str) -> bytes:
        return self.resolve(path).read_bytes()

    def is_binary(self, path: str) -> bool:
        with self.resolve(path).open("rb") as handle:
            return b"\x00" in handle.read(BINARY_SNIFF_BYTES)

    def text(self, path: str) -> str:
        """Full decoded text of a text file (no truncation)."""
        data = self.read_bytes(path)
        if b"\x00" in data[:BINARY_SNIFF_BYTES]:
            raise BinaryContentError(f"{path} holds binary content.")
        return data.decode("utf-8", errors="replace")

    def lines(self, path: str) -> List[str]:
        return split_lines(self.text(path))

    def text_files(self, suffixes: Optional[Set[str]] = None) -> List[str]:
        """Index entries that are readable text, optionally filtered by suffix."""
        selected: List[str] = []
        for path in self._file_index:
            if suffixes is not None and PurePosixPath(path).suffix.lower() not in suffixes:
                continue
            try:
                if self.is_binary(path):
                    continue
            except (NavigationError, OSError):
                continue
            selected.append(path)
        return selected

    @cached_property
    def import_graph(self) -> Dict[str, Tuple[str, ...]]:
        """Local import edges between Python files of the snapshot."""
        return {path: tuple(resolve_local_imports(self, path)) for path in self.text_files(PYTHON_SUFFIXES)}


# --- Tree ---

def get_repo_tree(repo: RepoHandle, max_depth: int = 3) -> str:
    """Sorted, depth-bounded listing of the snapshot; directories end with '/'."""
    tree: Dict[str, dict] = {}
    for path in repo.file_index:
        node = tree
        parts = PurePosixPath(path).parts
        for index, part in enumerate(parts):
            is_dir = index < len(parts) - 1
            node = node.setdefault(part + "/" if is_dir else part, {})

    lines = ["./"]

    def walk(node: Dict[str, dict], depth: int) -> None:
        for name in sorted(node):
            lines.append("  " * depth + name)
            if name.endswith("/") and depth < max_depth:
                walk(node[name], depth + 1)

    if max_depth >= 1:
        walk(tree, 1)
    return "\n".join(lines)


# --- Important files ---

_ROLE_PATTERNS: Tuple[Tuple[FileRole, Tuple[str, ...]], ...] = (
    (FileRole.README, ("readme", "readme.*")),
    (FileRole.LICENSE, ("license", "license.*", "licence", "licence.*", "copying", "copying.*")),
    (FileRole.DEPENDENCY_MANIFEST, (
        "requirements*.txt", "requirements*.in", "pyproject.toml", "setup.py", "setup.cfg",
        "pipfile", "pipfile.lock", "poetry.lock", "environment.yml", "environment.yaml",
        "package.json", "cargo.toml", "go.mod", "pom.xml", "build.gradle", "gemfile",
    )),
    (FileRole.CONTAINER_BUILD, (
        "dockerfile", "dockerfile.*", "*.dockerfile", "docker-compose*.yml",
        "docker-compose*.yaml", "containerfile",
    )),
    (FileRole.BUILD_SCRIPT, ("makefile", "gnumakefile", "*.mk", "cmakelists.txt", "justfile", "build.sh")),
)


def file_role(path: str) -> Optional[FileRole]:
    name = PurePosixPath(path).name.lower()
    for role, patterns in _ROLE_PATTERNS:
        if any(fnmatch.fnmatch(name, pattern) for pattern in patterns):
            return role
    return None


def find_important_files(repo: RepoHandle) -> List[ImportantFile]:
    found = []
    for path in repo.file_index:
        role = file_role(path)
        if role is not None:
            found.append(ImportantFile(path=path, role=role))
    return found


# --- File reading ---

def read_file(repo: RepoHandle, path: str) -> str:
    """
    Full text of a repository file, truncated past the configured size cap.

    Raises:
        NavigationError: If the path is outside the repository or absent.
        BinaryContentError: If the file holds binary content.
    """
    data = repo.read_bytes(path)
    if b"\x00" in data[:BINARY_SNIFF_BYTES]:
        raise BinaryContentError(f"{path} holds binary content.")
    limit = repo.max_file_bytes
    if len(data) > limit:
        return data[:limit].decode("utf-8", errors="replace") + TRUNCATION_MARKER.format(limit=limit)
    return data.decode("utf-8", errors="replace")


def read_snippet(repo: RepoHandle, path: str, line: int, context: int = 5) -> Snippet:
    """Lines [max(1, line - context), min(eof, line + context)] of a text file."""
    key = repo.normalize(path)
    lines = repo.lines(key)
    if not lines:
        raise NavigationError(f"{path} is empty.")
    if line < 1 or line > len(lines):
        raise NavigationError(f"Line {line} is outside {path} (1-{len(lines)}).")
    context = max(0, context)
    start = max(1, line - context)
    end = min(len(lines), line + context)
    return Snippet(file=key, start_line=start, end_line=end, lines=tuple(lines[start - 1:end]))


# --- Dependencies ---

_REQUIREMENT_LINE = re.compile(
    r"""^
    (?P<name>[A-Za-z0-9][A-Za-z0-9._-]*)
    \s*(?:\[[^\]]*\])?
    \s*(?P<spec>(?:===|==|!=|~=|>=|<=|>|<)\s*[^;\s,]+(?:\s*,\s*(?:===|==|!=|~=|>=|<=|>|<)\s*[^;\s,]+)*)?
    \s*(?:;.*)?
    $""",
    re.VERBOSE,
)


def _parse_requirement(text: str) -> Optional[Tuple[str, Optional[str]]]:
    match = _REQUIREMENT_LINE.match(text.strip())
    if not match:
        return None
    spec = match.group("spec")
    return match.group("name"), re.sub(r"\s+", "", spec) if spec else None


def _requirements_specs(repo: RepoHandle, path: str, warnings: List[ScanWarning]) -> List[DependencySpec]:
    specs = []
    for number, raw in enumerate(repo.lines(path), start=1):
        text = raw.split(" #", 1)[0].strip()
        if not text or text.startswith("#") or text.startswith("-"):
            continue
        parsed = _parse_requirement(text)
        if parsed is None:
            warnings.append(ScanWarning(
                source="dependencies", message=f"Unparseable requirement {raw.strip()!r}",
                location=f"{path}:{number}",
            ))
            continue
        specs.append(DependencySpec(manifest=path, package=parsed[0], version_constraint=parsed[1]))
    return specs


def _pyproject_specs(repo: RepoHandle, path: str, warnings: List[ScanWarning]) -> List[DependencySpec]:
    try:
        data = tomllib.loads(repo.text(path))
    except tomllib.TOMLDecodeError as e:
        warnings.append(ScanWarning(source="dependencies", message=f"Invalid TOML: {e}", location=path))
        return []
    requirements: List[str] = list(data.get("project", {}).get("dependencies", []))
    for extra in data.get("project", {}).get("optional-dependencies", {}).values():
        requirements.extend(extra)
    specs = []
    for requirement in requirements:
        parsed = _parse_requirement(requirement)
        if parsed is None:
            warnings.append(ScanWarning(
                source="dependencies", message=f"Unparseable requirement {requirement!r}", location=path,
            ))
            continue
        specs.append(DependencySpec(manifest=path, package=parsed[0], version_constraint=parsed[1]))
    poetry = data.get("tool", {}).get("poetry", {}).get("dependencies", {})
    for name, constraint in poetry.items():
        if name.lower() == "python":
            continue
        if isinstance(constraint, dict):
            constraint = constraint.get("version")
        specs.append(DependencySpec(manifest=path, package=name, version_constraint=constraint or None))
    return specs


def _package_json_specs(repo: RepoHandle, path: str, warnings: List[ScanWarning]) -> List[DependencySpec]:
    try:
        data = json.loads(repo.text(path))
    except json.JSONDecodeError as e:
        warnings.append(ScanWarning(source="dependencies", message=f"Invalid JSON: {e}", location=path))
        return []
    specs = []
    for section in ("dependencies", "devDependencies"):
        for name, constraint in sorted((data.get(section) or {}).items()):
            specs.append(DependencySpec(manifest=path, package=name, version_constraint=str(constraint) or None))
    return specs


def extract_dependency_files(
    repo: RepoHandle, warnings: Optional[List[ScanWarning]] = None
) -> List[DependencySpec]:
    """
    Parse requirements-style pin lists, pyproject.toml and package.json manifests.

    Unparseable lines are skipped; each one adds a warning record to
    `warnings` (when given) and to the log.
    """
    sink: List[ScanWarning] = []
    specs: List[DependencySpec] = []
    for path in repo.file_index:
        name = PurePosixPath(path).name.lower()
        try:
            if fnmatch.fnmatch(name, "requirements*.txt") or fnmatch.fnmatch(name, "requirements*.in"):
                specs.extend(_requirements_specs(repo, path, sink))
            elif name == "pyproject.toml":
                specs.extend(_pyproject_specs(repo, path, sink))
            elif name == "package.json":
                specs.extend(_package_json_specs(repo, path, sink))
        except (BinaryContentError, NavigationError, OSError) as e:
            sink.append(ScanWarning(source="dependencies", message=str(e), location=path))
    for warning in sink:
        logger.warning("%s (%s)", warning.message, warning.location)
    if warnings is not None:
        warnings.extend(sink)
    return specs


# --- Entry points ---

_MAIN_GUARD = re.compile(r"""^\s*if\s+__name__\s*==\s*['"]__main__['"]\s*:""")
_CLI_PARSE = re.compile(r"argparse\.ArgumentParser\(|\bArgumentParser\(|@click\.command|typer\.Typer\(|fire\.Fire\(")
_MAKE_TARGET = re.compile(r"^(?P<target>[A-Za-z0-9_][A-Za-z0-9_./-]*)\s*:(?!=)")
_RUN_COMMAND = re.compile(
    r"(?:\bpython3?\s+(?:-u\s+)?(?P<py>[\w./-]+\.py)\b"
    r"|\bpython3?\s+-m\s+(?P<mod>[\w.]+)"
    r"|\b(?:bash|sh)\s+(?P<sh>[\w./-]+\.sh)\b"
    r"|(?:^|\s)\./(?P<exe>[\w./-]+\.(?:sh|py))\b)"
)


def _command_target(repo: RepoHandle, line: str, base_dir: PurePosixPath) -> Optional[str]:
    match = _RUN_COMMAND.search(line)
    if not match:
        return None
    if match.group("mod"):
        module_path = match.group("mod").replace(".", "/")
        candidates = [f"{module_path}.py", f"{module_path}/__main__.py", f"src/{module_path}.py",
                      f"src/{module_path}/__main__.py"]
    else:
        script = match.group("py") or match.group("sh") or match.group("exe")
        script = script[2:] if script.startswith("./") else script
        candidates = [(base_dir / script).as_posix(), script]
    for candidate in candidates:
        if candidate in repo:
            return candidate
    return None


def detect_entrypoints(repo: RepoHandle) -> List[EntryPoint]:
    """Main guards, CLI parser construction, Makefile targets and README run commands."""
    found: List[EntryPoint] = []
    for path in repo.text_files():
        pure = PurePosixPath(path)
        suffix = pure.suffix.lower()
        name = pure.name.lower()
        lines = repo.lines(path)
        if suffix in PYTHON_SUFFIXES:
            guard = next((i for i, text in enumerate(lines, 1) if _MAIN_GUARD.match(text)), None)
            if guard is not None:
                found.append(EntryPoint(file=path, kind=EntryKind.MAIN_GUARD, evidence=lines[guard - 1],
                                        line=guard, target=path))
            cli = next((i for i, text in enumerate(lines, 1) if _CLI_PARSE.search(text)), None)
            if cli is not None:
                found.append(EntryPoint(file=path, kind=EntryKind.SCRIPT_WITH_CLI_PARSE,
                                        evidence=lines[cli - 1], line=cli, target=path))
        elif file_role(path) == FileRole.BUILD_SCRIPT and name != "cmakelists.txt":
            for number, text in enumerate(lines, 1):
                match = _MAKE_TARGET.match(text)
                if not match or match.group("target").startswith("."):
                    continue
                recipe_target = None
                for recipe in lines[number:]:
                    if not recipe.startswith("\t"):
                        break
                    recipe_target = recipe_target or _command_target(repo, recipe, pure.parent)
                found.append(EntryPoint(file=path, kind=EntryKind.MAKEFILE_TARGET, evidence=text,
                                        line=number, target=recipe_target))
        elif file_role(path) == FileRole.README:
            for number, text in enumerate(lines, 1):
                if _RUN_COMMAND.search(text):
                    found.append(EntryPoint(
                        file=path, kind=EntryKind.DOCUMENTED_RUN_COMMAND, evidence=text, line=number,
                        target=_command_target(repo, text, pure.parent),
                    ))
    return found


def entry_files(entrypoints: Iterable[EntryPoint]) -> Set[str]:
    """Files that an entry point executes directly."""
    return {entry.target for entry in entrypoints if entry.target}


# --- Package usage and search ---

def import_names(package: str) -> Tuple[str, ...]:
    """Module names a distribution is imported under."""
    lowered = package.strip().lower()
    if lowered in KNOWN_IMPORT_NAMES:
        return KNOWN_IMPORT_NAMES[lowered]
    return (re.sub(r"[-.]", "_", lowered),)


def _usage_patterns(package: str) -> List[re.Pattern]:
    patterns = []
    for module in import_names(package):
        escaped = re.escape(module)
        patterns.extend([
            re.compile(rf"^\s*import\s+(?:[\w.]+\s*(?:as\s+\w+)?\s*,\s*)*{escaped}(?![\w])"),
            re.compile(rf"^\s*from\s+{escaped}(?:\.[\w.]+)?\s+import\b"),
            re.compile(rf"(?<![\w.]){escaped}\.\w+"),
        ])
    raw = re.escape(package.strip())
    patterns.extend([
        re.compile(rf"""\brequire\(\s*['"]{raw}(?:/[^'"]*)?['"]\s*\)"""),
        re.compile(rf"""\b(?:from|import)\s+['"]{raw}(?:/[^'"]*)?['"]"""),
    ])
    return patterns


def search_package_usage(repo: RepoHandle, package: str) -> List[SearchHit]:
    """Import statements and qualified references of a package, token-bounded."""
    if not package.strip():
        return []
    patterns = _usage_patterns(package)
    hits: List[SearchHit] = []
    for path in repo.text_files(CODE_SUFFIXES):
        for number, text in enumerate(repo.lines(path), 1):
            stripped = text.strip()
            if stripped.startswith("#") or stripped.startswith("//"):
                continue
            if any(pattern.search(text) for pattern in patterns):
                hits.append(SearchHit(path=path, line=number, text=stripped))
    return hits


def search_repo(
    repo: RepoHandle, query: str, max_hits: int = 50, regex: bool = False, ignore_case: bool = False
) -> List[SearchHit]:
    """
    Literal (or regular-expression) search over every text file of the snapshot.

    Raises:
        PatternError: If `regex` is set and `query` does not compile.
    """
    flags = re.IGNORECASE if ignore_case else 0
    try:
        pattern = re.compile(query if regex else re.escape(query), flags)
    except re.error as e:
        raise PatternError(f"Invalid search pattern {query!r}: {e}")
    hits: List[SearchHit] = []
    if max_hits <= 0:
        return hits
    for path in repo.text_files():
        for number, text in enumerate(repo.lines(path), 1):
            if pattern.search(text):
                hits.append(SearchHit(path=path, line=number, text=text.strip()))
                if len(hits) >= max_hits:
                    return hits
    return hits


# --- Local import graph ---

_PY_IMPORT = re.compile(
    r"""
    ^\s*
    (?:
        import \s+ (?P<plain> [\w.]+ (?:\s+as\s+\w+)? (?:\s*,\s*[\w.]+(?:\s+as\s+\w+)?)* )
      |
        from \s+ (?P<base> \.* [\w.]* ) \s+ import \s+ (?P<names> .+ )
    )
    """,
    re.VERBOSE,
)


def _module_candidates(module: str, base_dir: PurePosixPath) -> List[str]:
    rel = module.replace(".", "/")
    roots = [base_dir, PurePosixPath("."), PurePosixPath("src")]
    candidates = []
    for root in roots:
        stem = (root / rel).as_posix()
        candidates.extend([f"{stem}.py", f"{stem}/__init__.py"])
    return candidates


def resolve_local_imports(repo: RepoHandle, path: str) -> List[str]:
    """Repository files imported by a Python file (absolute, sibling and relative imports)."""
    base_dir = PurePosixPath(path).parent
    modules: List[Tuple[str, PurePosixPath]] = []
    for text in repo.lines(path):
        match = _PY_IMPORT.match(text)
        if not match:
            continue
        if match.group("plain"):
            for part in match.group("plain").split(","):
                modules.append((part.split(" as ")[0].strip(), base_dir))
            continue
        base = match.group("base")
        dots = len(base) - len(base.lstrip("."))
        anchor = base_dir
        for _ in range(max(0, dots - 1)):
            anchor = anchor.parent
        stem = base.lstrip(".")
        names = [n.split(" as ")[0].strip(" ()") for n in match.group("names").split(",")]
        if dots:
            if stem:
                modules.append((stem, anchor))
            for name in names:
                modules.append(((f"{stem}.{name}" if stem else name), anchor))
        else:
            modules.append((stem, base_dir))
            for name in names:
                modules.append((f"{stem}.{name}", base_dir))
    resolved: Set[str] = set()
    for module, anchor in modules:
        if not module or module == "*":
            continue
        for candidate in _module_candidates(module, anchor):
            if candidate in repo and candidate != path:
                resolved.add(candidate)
                break
    return sorted(resolved)


def entrypoint_reach(repo: RepoHandle, entrypoints: Iterable[EntryPoint], max_hops: int = 2) -> Dict[str, Tuple[int, str]]:
    """
    Files reachable from an entry file within `max_hops` local imports.

    Returns a map path -> (hops, entry file it is reached from); entry files
    themselves have hop count 0.
    """
    reach: Dict[str, Tuple[int, str]] = {}
    frontier = sorted(entry_files(entrypoints))
    for entry in frontier:
        reach[entry] = (0, entry)
    graph = repo.import_graph
    for hop in range(1, max_hops + 1):
        next_frontier = []
        for path in frontier:
            for imported in graph.get(path, ()):
                if imported not in reach:
                    reach[imported] = (hop, reach[path][1])
                    next_frontier.append(imported)
        frontier = sorted(next_frontier)
    return reach


def importers_of(repo: RepoHandle, path: str) -> List[str]:
    return sorted(source for source, targets in repo.import_graph.items() if path in targets)


# --- Enclosing definitions ---

_DEFINITION_HEADER = re.compile(
    r"^(?P<indent>[ \t]*)(?:async\s+def|def|class|function|func|fn|sub)\s+(?P<name>[A-Za-z_$][\w$]*)"
)

_parser = None


def _python_parser():
    global _parser
    if _parser is None:
        _parser = Parser(Language(ts_python.language()))
    return _parser


def _indent_width(text: str) -> int:
    return len(text) - len(text.lstrip(" \t"))


def _module_span(path: str, line_count: int, approximate: bool = False) -> FunctionSpan:
    return FunctionSpan(file=path, name="<module-level>", start_line=1, end_line=max(1, line_count),
                        kind=SpanKind.MODULE, approximate=approximate)


def _heuristic_span(path: str, lines: List[str], line: int) -> FunctionSpan:
    """Nearest preceding definition header up to the next same-or-lower indented line."""
    headers = [(i, m) for i, text in enumerate(lines, 1) if (m := _DEFINITION_HEADER.match(text))]
    for start, match in reversed(headers):
        if start > line:
            continue
        indent = _indent_width(lines[start - 1])
        end = start
        for number in range(start + 1, len(lines) + 1):
            text = lines[number - 1]
            if not text.strip():
                continue
            if _indent_width(text) <= indent and not text.strip().startswith(("}", ")")):
                break
            end = number
        if start <= line <= end:
            kind = SpanKind.CLASS if lines[start - 1].lstrip().startswith("class") else SpanKind.FUNCTION
            return FunctionSpan(file=path, name=match.group("name"), start_line=start, end_line=end,
                                kind=kind, approximate=True)
    return _module_span(path, len(lines), approximate=True)


def _node_rows(node: Node) -> Tuple[int, int]:
    start_row, end_row = node.start_point[0], node.end_point[0]
    if node.end_point[1] == 0 and end_row > start_row:
        end_row -= 1
    return start_row + 1, end_row + 1


def _tree_sitter_span(path: str, source: bytes, line: int, line_count: int) -> Optional[FunctionSpan]:
    tree = _python_parser().parse(source)
    if tree.root_node.has_error:
        return None
    chain: List[Node] = []

    def descend(node: Node) -> None:
        for child in node.children:
            start, end = _node_rows(child)
            if not start <= line <= end:
                continue
            if child.type in ("function_definition", "class_definition"):
                chain.append(child)
            descend(child)
            return

    descend(tree.root_node)
    if not chain:
        return _module_span(path, line_count)
    innermost = chain[-1]
    if innermost.type == "class_definition":
        kind = SpanKind.CLASS
    elif len(chain) > 1 and chain[-2].type == "class_definition":
        kind = SpanKind.METHOD
    else:
        kind = SpanKind.FUNCTION
    name_node = innermost.child_by_field_name("name")
    name = name_node.text.decode("utf-8", errors="replace") if name_node is not None else "<anonymous>"
    start, end = _node_rows(innermost)
    return FunctionSpan(file=path, name=name, start_line=start, end_line=end, kind=kind)


def extract_enclosing_function(repo: RepoHandle, path: str, line: int) -> FunctionSpan:
    """
    Innermost function, method or class containing `line`.

    Python files are parsed with tree-sitter; other files, and sources that
    fail to parse, get an indentation-based span flagged `approximate`.
    Lines outside any definition yield the whole-file module span.
    """
    key = repo.normalize(path)
    source = repo.read_bytes(key)
    if b"\x00" in source[:BINARY_SNIFF_BYTES]:
        raise BinaryContentError(f"{path} holds binary content.")
    lines = split_lines(source.decode("utf-8", errors="replace"))
    if line < 1 or line > max(1, len(lines)):
        raise NavigationError(f"Line {line} is outside {path} (1-{len(lines)}).")
    if PurePosixPath(key).suffix.lower() in PYTHON_SUFFIXES and TREE_SITTER_AVAILABLE:
        span = _tree_sitter_span(key, source, line, len(lines))
        if span is not None:
            return span
        logger.debug("tree-sitter could not parse %s cleanly, using the indentation heuristic", key)
    return _heuristic_span(key, lines, line)
