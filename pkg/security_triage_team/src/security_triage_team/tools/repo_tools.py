from typing import Any, Dict, List, Type

from crewai.tools import BaseTool
from pydantic import BaseModel, ConfigDict, Field

from security_triage_team import repo_context
from security_triage_team.errors import BinaryContentError, NavigationError, PatternError
from security_triage_team.repo_context import RepoHandle

MAX_SPAN_LINES = 80


# --- Observation renderers ---

def render_hits(hits: List[repo_context.SearchHit], empty: str) -> str:
    if not hits:
        return empty
    return "\n".join(f"{hit.path}:{hit.line}: {hit.text}" for hit in hits)


def render_important_files(files: List[repo_context.ImportantFile]) -> str:
    if not files:
        return "No README, license, manifest or build files found."
    return "\n".join(f"{item.path} [{item.role.value}]" for item in files)


def render_dependencies(specs: List[repo_context.DependencySpec]) -> str:
    if not specs:
        return "No dependency manifests found."
    return "\n".join(
        f"{spec.manifest}: {spec.package}{spec.version_constraint or ' (unpinned)'}" for spec in specs
    )


def render_entrypoints(entrypoints: List[repo_context.EntryPoint]) -> str:
    if not entrypoints:
        return "No entry points detected."
    lines = []
    for entry in entrypoints:
        runs = f" -> runs {entry.target}" if entry.target and entry.target != entry.file else ""
        lines.append(f"{entry.file}:{entry.line} [{entry.kind.value}]{runs} {entry.evidence.strip()}")
    return "\n".join(lines)


def render_span(repo: RepoHandle, span: repo_context.FunctionSpan) -> str:
    header = f"{span.kind.value} {span.name} {span.file}:{span.start_line}-{span.end_line}"
    if span.approximate:
        header += " (approximate)"
    lines = repo.lines(span.file)
    end = min(span.end_line, span.start_line + MAX_SPAN_LINES - 1)
    body = "\n".join(f"{n} | {lines[n - 1]}" for n in range(span.start_line, end + 1) if n <= len(lines))
    if end < span.end_line:
        body += f"\n... [{span.end_line - end} more lines]"
    return f"{header}\n{body}"


# --- Tool argument schemas ---

class NoArguments(BaseModel):
    """Input schema for tools that take no arguments."""


class RepoTreeInput(BaseModel):
    max_depth: int = Field(3, ge=0, description="How many directory levels to expand.")


class FilePathInput(BaseModel):
    path: str = Field(..., description="Repository-relative file path.")


class SnippetInput(BaseModel):
    path: str = Field(..., description="Repository-relative file path.")
    line: int = Field(..., ge=1, description="1-based line to center the snippet on.")
    context: int = Field(5, ge=0, description="Lines to show before and after the line.")


class PackageInput(BaseModel):
    package: str = Field(..., description="Distribution or module name, e.g. 'requests'.")


class SearchInput(BaseModel):
    query: str = Field(..., description="Text to look for.")
    max_hits: int = Field(50, ge=1, description="Stop after this many matching lines.")
    regex: bool = Field(False, description="Treat the query as a regular expression.")


class LocationInput(BaseModel):
    path: str = Field(..., description="Repository-relative file path.")
    line: int = Field(..., ge=1, description="1-based line inside the definition.")


# --- Tools ---

class RepoTool(BaseTool):
    """Base class of the read-only repository tools; errors become observations."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    repo: RepoHandle = Field(exclude=True)

    def _run(self, **kwargs: Any) -> str:
        try:
            return self._observe(**kwargs)
        except (NavigationError, BinaryContentError, PatternError) as e:
            return f"ERROR: {e}"

    def _observe(self, **kwargs: Any) -> str:
        raise NotImplementedError


class GetRepoTreeTool(RepoTool):
    name: str = "get_repo_tree"
    description: str = "Show the repository's directory tree, sorted, directories ending with '/'."
    args_schema: Type[BaseModel] = RepoTreeInput

    def _observe(self, max_depth: int = 3) -> str:
        return repo_context.get_repo_tree(self.repo, max_depth)


class FindImportantFilesTool(RepoTool):
    name: str = "find_important_files"
    description: str = "List README, license, dependency manifest, container and build files with their role."
    args_schema: Type[BaseModel] = NoArguments

    def _observe(self) -> str:
        return render_important_files(repo_context.find_important_files(self.repo))


class ReadFileTool(RepoTool):
    name: str = "read_file"
    description: str = "Read the full text of a repository file (very large files are truncated)."
    args_schema: Type[BaseModel] = FilePathInput

    def _observe(self, path: str) -> str:
        return repo_context.read_file(self.repo, path)


class ReadSnippetTool(RepoTool):
    name: str = "read_snippet"
    description: str = "Show numbered lines around a specific line of a file."
    args_schema: Type[BaseModel] = SnippetInput

    def _observe(self, path: str, line: int, context: int = 5) -> str:
        return repo_context.read_snippet(self.repo, path, line, context).render()


class ExtractDependencyFilesTool(RepoTool):
    name: str = "extract_dependency_files"
    description: str = "List declared dependencies from requirements files, pyproject.toml and package.json."
    args_schema: Type[BaseModel] = NoArguments

    def _observe(self) -> str:
        return render_dependencies(repo_context.extract_dependency_files(self.repo))


class DetectEntrypointsTool(RepoTool):
    name: str = "detect_entrypoints"
    description: str = (
        "Find how the artifact is run: main guards, CLI argument parsers, Makefile targets "
        "and run commands documented in the README."
    )
    args_schema: Type[BaseModel] = NoArguments

    def _observe(self) -> str:
        return render_entrypoints(repo_context.detect_entrypoints(self.repo))


class SearchPackageUsageTool(RepoTool):
    name: str = "search_package_usage"
    description: str = "Find import statements and qualified uses of a package in the code files."
    args_schema: Type[BaseModel] = PackageInput

    def _observe(self, package: str) -> str:
        hits = repo_context.search_package_usage(self.repo, package)
        return render_hits(hits, f"No usage of '{package}' found in any code file.")


class SearchRepoTool(RepoTool):
    name: str = "search_repo"
    description: str = "Search every text file of the repository for a literal string or regular expression."
    args_schema: Type[BaseModel] = SearchInput

    def _observe(self, query: str, max_hits: int = 50, regex: bool = False) -> str:
        hits = repo_context.search_repo(self.repo, query, max_hits=max_hits, regex=regex)
        return render_hits(hits, f"No matches for {query!r}.")


class ExtractEnclosingFunctionTool(RepoTool):
    name: str = "extract_enclosing_function"
    description: str = "Show the innermost function, method or class that contains a given line."
    args_schema: Type[BaseModel] = LocationInput

    def _observe(self, path: str, line: int) -> str:
        return render_span(self.repo, repo_context.extract_enclosing_function(self.repo, path, line))


TOOL_CLASSES: tuple = (
    GetRepoTreeTool,
    FindImportantFilesTool,
    ReadFileTool,
    ReadSnippetTool,
    ExtractDependencyFilesTool,
    DetectEntrypointsTool,
    SearchPackageUsageTool,
    SearchRepoTool,
    ExtractEnclosingFunctionTool,
)

TOOL_NAMES: tuple = tuple(cls.model_fields["name"].default for cls in TOOL_CLASSES)


def build_repo_tools(repo: RepoHandle) -> Dict[str, RepoTool]:
    """All nine tools bound to one repository snapshot, keyed by tool name."""
    tools = [cls(repo=repo) for cls in TOOL_CLASSES]
    return {tool.name: tool for tool in tools}


def tool_schemas(tools: Dict[str, RepoTool]) -> List[Dict[str, Any]]:
    """Chat-completion function declarations generated from the tools' argument models."""
    declarations = []
    for name, tool in tools.items():
        parameters = tool.args_schema.model_json_schema()
        parameters.pop("title", None)
        parameters.setdefault("properties", {})
        declarations.append({
            "type": "function",
            "function": {"name": name, "description": tool.description, "parameters": parameters},
        })
    return declarations
