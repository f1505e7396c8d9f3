"""
pipeline.py - Scan, analyze and report on one artifact.

Each stage reads and writes plain files under the output directory so the CLI
subcommands can run them separately:

    findings.jsonl     one normalized Finding per line
    assessments.jsonl  one {finding_ref, assessment} record per line
    errors.jsonl       one record per finding whose analysis failed
    traces.jsonl       one AgentTrace per analyzed finding
    report.json / report.md
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from security_triage_team.corpus_stats import compute_summary
from security_triage_team.crew import CrewBackend
from security_triage_team.errors import (
    BudgetExceededError,
    IngestError,
    NavigationError,
    StartupError,
    TriageError,
)
from security_triage_team.evaluation import cost_summary
from security_triage_team.ingest import (
    FindingSet,
    builtin_scan,
    ingest_semgrep_report,
    ingest_trivy_report,
    load_report,
    load_rules,
    merge_and_index,
)
from security_triage_team.models import (
    Assessment,
    Finding,
    FindingRef,
    ScanWarning,
    ToolName,
    findings_from_jsonl,
    findings_to_jsonl,
)
from security_triage_team.reasoning.agent import AgentTrace, BackendKind, Budget, ReasoningBackend, analyze_finding
from security_triage_team.reasoning.backends import ChatCompletionBackend, HeuristicBackend
from security_triage_team.report import (
    AssessmentRecord,
    FindingError,
    ReportDocument,
    ReportFormat,
    category_tally,
    checklist_inputs,
    label_tally,
    render_checklist,
    render_report,
    summary_line,
)
from security_triage_team.repo_context import RepoHandle
from security_triage_team.settings import RunConfig

logger = logging.getLogger(__name__)

FINDINGS_FILE = "findings.jsonl"
ASSESSMENTS_FILE = "assessments.jsonl"
ERRORS_FILE = "errors.jsonl"
TRACES_FILE = "traces.jsonl"
REPORT_JSON_FILE = "report.json"
REPORT_MARKDOWN_FILE = "report.md"


class AnalysisOutcome(BaseModel):
    """Result of analyzing one finding: an assessment or an error, plus whatever trace exists."""

    model_config = ConfigDict(frozen=True)

    finding: Finding
    assessment: Optional[Assessment] = None
    trace: Optional[AgentTrace] = None
    error: Optional[FindingError] = None


# --- Startup ---

def open_repo(path: Path) -> RepoHandle:
    try:
        return RepoHandle.open(path)
    except (NavigationError, OSError) as e:
        raise StartupError(f"Cannot open repository {path}: {e}") from e


def scan_findings(config: RunConfig, repo: RepoHandle, warnings: Optional[List[ScanWarning]] = None) -> FindingSet:
    """
    Read every configured report and run the builtin scan.

    Raises:
        StartupError: If a report is missing, unreadable or malformed.
    """
    artifact_id = config.resolved_artifact_id
    root = str(repo.root)
    batches: List[List[Finding]] = []
    sources: Sequence[Tuple[ToolName, Iterable[Path]]] = (
        (ToolName.SEMGREP, config.semgrep_report_paths),
        (ToolName.TRIVY, config.trivy_report_paths),
    )
    for tool, paths in sources:
        ingest = ingest_semgrep_report if tool == ToolName.SEMGREP else ingest_trivy_report
        for path in paths:
            try:
                report = load_report(path, tool)
                batches.append(ingest(report, artifact_id, repo_root=root, warnings=warnings))
            except (OSError, IngestError) as e:
                raise StartupError(f"Cannot ingest {tool.value} report {path}: {e}") from e
    if config.builtin_scan:
        rules = load_rules(config.builtin_rules_path)
        batches.append(builtin_scan(repo, rules, artifact_id, warnings=warnings))
    return merge_and_index(batches)


def create_backend(config: RunConfig) -> ReasoningBackend:
    if config.backend == BackendKind.REMOTE_MODEL:
        return ChatCompletionBackend(config.endpoint_url, config.model_name, seed=config.seed)
    if config.backend == BackendKind.CREW:
        return CrewBackend(config.endpoint_url, config.model_name, seed=config.seed)
    return HeuristicBackend()


# --- Analysis ---

def analyze_one(finding: Finding, repo: RepoHandle, backend: ReasoningBackend, budget: Budget) -> AnalysisOutcome:
    ref = FindingRef.of(finding)
    try:
        assessment, trace = analyze_finding(finding, repo, backend, budget)
    except BudgetExceededError as e:
        logger.warning("%s: %s", ref.key, e)
        return AnalysisOutcome(finding=finding, trace=e.trace,
                               error=FindingError(finding_ref=ref, error_type=type(e).__name__, message=str(e)))
    except TriageError as e:
        logger.warning("%s: %s", ref.key, e)
        return AnalysisOutcome(finding=finding,
                               error=FindingError(finding_ref=ref, error_type=type(e).__name__, message=str(e)))
    except Exception as e:
        logger.exception("Unexpected failure while analyzing %s", ref.key)
        return AnalysisOutcome(finding=finding,
                               error=FindingError(finding_ref=ref, error_type=type(e).__name__, message=str(e)))
    return AnalysisOutcome(finding=finding, assessment=assessment, trace=trace)


def analyze_findings(
    findings: Sequence[Finding],
    repo: RepoHandle,
    backend: ReasoningBackend,
    budget: Budget,
    worker_count: int = 1,
) -> List[AnalysisOutcome]:
    """Analyze findings concurrently; outcomes come back in input order."""
    if not findings:
        return []
    with ThreadPoolExecutor(max_workers=worker_count) as executor:
        outcomes = list(executor.map(lambda finding: analyze_one(finding, repo, backend, budget), findings))
    analyzed = sum(1 for outcome in outcomes if outcome.assessment is not None)
    logger.info("Analyzed %d of %d findings", analyzed, len(findings))
    return outcomes


# --- Report ---

def build_report(
    findings: FindingSet,
    records: Sequence[AssessmentRecord],
    errors: Sequence[FindingError],
    traces: Sequence[AgentTrace],
    repo: RepoHandle,
    config: RunConfig,
) -> ReportDocument:
    assessments = [record.assessment for record in records]
    inputs = checklist_inputs(
        findings.findings,
        {record.finding_ref.key: record.assessment for record in records},
        repo,
        dependency_scan_ran=bool(config.trivy_report_paths),
    )
    cost = None
    if traces and config.backend != BackendKind.HEURISTIC:
        cost = cost_summary(traces, config.prices, artifact_count=len(findings.by_artifact) or None)
    return ReportDocument(
        artifact_id=config.resolved_artifact_id,
        summary=compute_summary(findings),
        assessments=tuple(records),
        errors=tuple(errors),
        label_tally=label_tally(assessments),
        category_tally=category_tally(assessments),
        checklist=render_checklist(inputs),
        cost=cost,
    )


# --- Files ---

def _jsonl(models: Iterable[BaseModel]) -> str:
    return "".join(model.model_dump_json() + "\n" for model in models)


def write_findings(path: Path, findings: Iterable[Finding]) -> None:
    path.write_text(findings_to_jsonl(findings), encoding="utf-8")


def read_findings(path: Path) -> FindingSet:
    try:
        return FindingSet(findings_from_jsonl(path.read_text(encoding="utf-8")))
    except OSError as e:
        raise StartupError(f"Cannot read findings file {path}: {e}") from e


def write_records(path: Path, models: Iterable[BaseModel]) -> None:
    path.write_text(_jsonl(models), encoding="utf-8")


def read_assessment_records(path: Path) -> List[AssessmentRecord]:
    return [AssessmentRecord.model_validate_json(line)
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_errors(path: Path) -> List[FindingError]:
    if not path.exists():
        return []
    return [FindingError.model_validate_json(line)
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_traces(path: Path) -> List[AgentTrace]:
    if not path.exists():
        return []
    return [AgentTrace.model_validate_json(line)
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_analysis(output_dir: Path, outcomes: Sequence[AnalysisOutcome]) -> None:
    write_records(output_dir / ASSESSMENTS_FILE, (
        AssessmentRecord(finding_ref=FindingRef.of(o.finding), assessment=o.assessment)
        for o in outcomes if o.assessment is not None
    ))
    write_records(output_dir / ERRORS_FILE, (o.error for o in outcomes if o.error is not None))
    write_records(output_dir / TRACES_FILE, (o.trace for o in outcomes if o.trace is not None))


def write_report(output_dir: Path, doc: ReportDocument) -> None:
    (output_dir / REPORT_JSON_FILE).write_text(render_report(doc, ReportFormat.JSON), encoding="utf-8")
    (output_dir / REPORT_MARKDOWN_FILE).write_text(render_report(doc, ReportFormat.MARKDOWN), encoding="utf-8")


def run_pipeline(config: RunConfig, backend: Optional[ReasoningBackend] = None) -> ReportDocument:
    """
    Scan the repository, analyze every finding and write the run's files.

    Per-finding failures are recorded in the report and do not stop the batch.

    Raises:
        StartupError: If the repository or a report cannot be read.
        ConfigError: If the rule file or the backend configuration is invalid.
    """
    repo = open_repo(config.repo_path)
    findings = scan_findings(config, repo)
    backend = backend or create_backend(config)

    output_dir = config.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    write_findings(output_dir / FINDINGS_FILE, findings)

    outcomes = analyze_findings(findings.findings, repo, backend, config.budget, config.worker_count)
    write_analysis(output_dir, outcomes)

    doc = build_report(
        findings,
        [AssessmentRecord(finding_ref=FindingRef.of(o.finding), assessment=o.assessment)
         for o in outcomes if o.assessment is not None],
        [o.error for o in outcomes if o.error is not None],
        [o.trace for o in outcomes if o.trace is not None],
        repo,
        config,
    )
    write_report(output_dir, doc)
    logger.info("%s: %s", doc.artifact_id, summary_line(doc))
    return doc
