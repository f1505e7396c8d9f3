"""
report.py - The artifact security report: label tallies, the five-question
security checklist, per-finding assessments and cost, as JSON or markdown.

Checklist statuses are derived mechanically from the findings, their
assessments and a few repository signals, so the same inputs always give the
same checklist.
"""

import logging
import re
from collections import Counter
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from security_triage_team.corpus_stats import CorpusSummary, Share, percentage
from security_triage_team.evaluation import CostRecord, format_cost
from security_triage_team.models import (
    Assessment,
    Category,
    Finding,
    FindingRef,
    LabelCategory,
    SecurityLabel,
    Severity,
    TriState,
    TriValue,
    assessment_to_dict,
    label_category,
)
from security_triage_team.reasoning.evidence import repo_signals
from security_triage_team.repo_context import EntryKind, RepoHandle, search_package_usage

logger = logging.getLogger(__name__)

UNSAFE_OPERATION_CWES = frozenset({"CWE-502", "CWE-78", "CWE-95"})
TRUST_STATEMENT = re.compile(
    r"\b(untrusted|trusted|trust boundar\w*|do not expose|not (?:be )?exposed|local use only|"
    r"only (?:run|use) (?:it )?(?:locally|offline)|offline|sandbox\w*|isolated (?:vm|environment|machine))\b",
    re.IGNORECASE,
)
CHECKLIST_QUESTIONS: Tuple[str, ...] = (
    "Does the artifact process external or user-controlled input?",
    "Are unsafe operations like deserialization and shell execution properly validated or restricted?",
    "Are third-party dependencies free from known critical vulnerabilities?",
    "Is the intended execution context (offline experiment vs. deployment) clearly documented?",
    "Are assumptions about trust boundaries and input sources explicitly stated?",
)


class ChecklistStatus(str, Enum):
    YES = "yes"
    NO = "no"
    UNCLEAR = "unclear"


class ReportFormat(str, Enum):
    JSON = "json"
    MARKDOWN = "markdown"


class ChecklistItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    question: str
    status: ChecklistStatus
    evidence: str


class ChecklistInputs(BaseModel):
    """Everything the checklist is derived from; keys of `assessments` are finding reference keys."""

    model_config = ConfigDict(frozen=True)

    findings: Tuple[Finding, ...] = ()
    assessments: Dict[str, Assessment] = Field(default_factory=dict)
    dependency_usage: Dict[str, int] = Field(default_factory=dict)
    documented_run_commands: Tuple[str, ...] = ()
    trust_statements: Tuple[str, ...] = ()
    dependency_scan_ran: bool = False


class AssessmentRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    finding_ref: FindingRef
    assessment: Assessment


class FindingError(BaseModel):
    """An analysis that ended without an assessment."""

    model_config = ConfigDict(frozen=True)

    finding_ref: FindingRef
    error_type: str
    message: str


class ReportDocument(BaseModel):
    model_config = ConfigDict(frozen=True)

    artifact_id: Optional[str] = None
    summary: CorpusSummary = Field(default_factory=CorpusSummary)
    assessments: Tuple[AssessmentRecord, ...] = ()
    errors: Tuple[FindingError, ...] = ()
    label_tally: Dict[str, Share] = Field(default_factory=dict)
    category_tally: Dict[str, Share] = Field(default_factory=dict)
    checklist: Tuple[ChecklistItem, ...] = ()
    cost: Optional[CostRecord] = None

    @model_validator(mode="after")
    def _tally_matches(self) -> "ReportDocument":
        if sum(share.count for share in self.label_tally.values()) != len(self.assessments):
            raise ValueError("label tally does not add up to the number of assessments")
        if self.checklist and len(self.checklist) != len(CHECKLIST_QUESTIONS):
            raise ValueError(f"checklist must hold exactly {len(CHECKLIST_QUESTIONS)} items")
        return self


# --- Tallies ---

def label_tally(assessments: Iterable[Assessment]) -> Dict[str, Share]:
    counts = Counter(assessment.security_label.value for assessment in assessments)
    total = sum(counts.values())
    return {
        label.value: Share(count=counts[label.value], percentage=percentage(counts[label.value], total))
        for label in SecurityLabel
        if counts[label.value]
    }


def category_tally(assessments: Iterable[Assessment]) -> Dict[str, Share]:
    counts = Counter(label_category(assessment.security_label).value for assessment in assessments)
    total = sum(counts.values())
    return {
        category.value: Share(count=counts[category.value], percentage=percentage(counts[category.value], total))
        for category in (LabelCategory.NON_SECURITY, LabelCategory.SECURITY_RELEVANT)
        if counts[category.value]
    }


def format_share(share: Share) -> str:
    return f"{share.count} ({share.percentage}%)"


# --- Checklist ---

def _attacker_value(assessment: Assessment) -> Optional[TriValue]:
    try:
        return TriState.parse(assessment.input_controlled_by_attacker).value
    except ValueError:
        return None


def _refs(findings: Iterable[Finding], limit: int = 5) -> str:
    keys = [FindingRef.of(finding).key for finding in findings]
    shown = ", ".join(keys[:limit])
    return shown + (f" and {len(keys) - limit} more" if len(keys) > limit else "")


def _external_input_item(inputs: ChecklistInputs) -> ChecklistItem:
    question = CHECKLIST_QUESTIONS[0]
    assessed = [(f, inputs.assessments[FindingRef.of(f).key]) for f in inputs.findings
                if FindingRef.of(f).key in inputs.assessments]
    if not assessed:
        return ChecklistItem(question=question, status=ChecklistStatus.UNCLEAR,
                             evidence="No assessed findings to judge input handling from.")
    controlled = [f for f, a in assessed if _attacker_value(a) == TriValue.YES]
    if controlled:
        return ChecklistItem(question=question, status=ChecklistStatus.YES,
                             evidence=f"Attacker-controlled input reaches {_refs(controlled)}.")
    if all(_attacker_value(a) == TriValue.NO for _, a in assessed):
        return ChecklistItem(question=question, status=ChecklistStatus.NO,
                             evidence=f"None of the {len(assessed)} assessed findings takes attacker-controlled input.")
    return ChecklistItem(question=question, status=ChecklistStatus.UNCLEAR,
                         evidence="Input control is uncertain for some assessed findings.")


def _unsafe_operations_item(inputs: ChecklistInputs) -> ChecklistItem:
    question = CHECKLIST_QUESTIONS[1]
    if not inputs.findings:
        return ChecklistItem(question=question, status=ChecklistStatus.UNCLEAR, evidence="No findings were reported.")
    flagged = []
    for finding in inputs.findings:
        if not UNSAFE_OPERATION_CWES.intersection(finding.cwe_ids):
            continue
        assessment = inputs.assessments.get(FindingRef.of(finding).key)
        if assessment is None or assessment.security_label != SecurityLabel.FALSE_POSITIVE:
            flagged.append((finding, assessment))
    risky = [f for f, a in flagged if a is None or a.security_label in
             (SecurityLabel.CONTEXTUAL_RISK, SecurityLabel.HARDENING_RECOMMENDATION)]
    if risky:
        return ChecklistItem(question=question, status=ChecklistStatus.NO,
                             evidence=f"Unrestricted deserialization, shell or eval use: {_refs(risky)}.")
    if flagged:
        return ChecklistItem(question=question, status=ChecklistStatus.YES,
                             evidence=f"Unsafe operations are confined to research demonstrations: {_refs(f for f, _ in flagged)}.")
    return ChecklistItem(question=question, status=ChecklistStatus.YES,
                         evidence="No deserialization, shell or eval finding survived assessment.")


def _dependency_item(inputs: ChecklistInputs) -> ChecklistItem:
    question = CHECKLIST_QUESTIONS[2]
    critical = [f for f in inputs.findings
                if f.category == Category.DEPENDENCY_VULN and f.severity == Severity.CRITICAL]
    used = [f for f in critical if inputs.dependency_usage.get(f.package or "", 0) > 0]
    if used:
        return ChecklistItem(question=question, status=ChecklistStatus.NO,
                             evidence=f"Critical vulnerabilities in used dependencies: {_refs(used)}.")
    if critical:
        packages = sorted({f.package or "" for f in critical})
        return ChecklistItem(question=question, status=ChecklistStatus.YES,
                             evidence=f"Critical advisories only affect unused packages; usage search found no "
                                      f"imports of {', '.join(packages)}.")
    if inputs.dependency_scan_ran:
        return ChecklistItem(question=question, status=ChecklistStatus.YES,
                             evidence="The dependency scan reported no critical vulnerabilities.")
    return ChecklistItem(question=question, status=ChecklistStatus.UNCLEAR, evidence="No dependency scan was run.")


def _documented_item(question: str, statements: Sequence[str], missing: str) -> ChecklistItem:
    if statements:
        return ChecklistItem(question=question, status=ChecklistStatus.YES, evidence="; ".join(statements[:3]))
    return ChecklistItem(question=question, status=ChecklistStatus.UNCLEAR, evidence=missing)


def render_checklist(inputs: ChecklistInputs) -> Tuple[ChecklistItem, ...]:
    """The five checklist items, in their fixed order."""
    return (
        _external_input_item(inputs),
        _unsafe_operations_item(inputs),
        _dependency_item(inputs),
        _documented_item(CHECKLIST_QUESTIONS[3], inputs.documented_run_commands,
                         "The README documents no run command."),
        _documented_item(CHECKLIST_QUESTIONS[4], inputs.trust_statements,
                         "The README states no trust assumptions."),
    )


def checklist_inputs(
    findings: Sequence[Finding],
    assessments: Mapping[str, Assessment],
    repo: RepoHandle,
    dependency_scan_ran: bool = False,
) -> ChecklistInputs:
    """Collect the repository signals the checklist needs."""
    signals = repo_signals(repo)
    packages = sorted({f.package for f in findings if f.category == Category.DEPENDENCY_VULN and f.package})
    return ChecklistInputs(
        findings=tuple(findings),
        assessments=dict(assessments),
        dependency_usage={package: len(search_package_usage(repo, package)) for package in packages},
        documented_run_commands=tuple(
            f"{entry.file}:{entry.line}: {entry.evidence.strip()}"
            for entry in signals.entrypoints if entry.kind == EntryKind.DOCUMENTED_RUN_COMMAND
        ),
        trust_statements=tuple(f"{path}: {sentence}" for path, sentence in signals.readme_sentences
                               if TRUST_STATEMENT.search(sentence)),
        dependency_scan_ran=dependency_scan_ran,
    )


# --- Rendering ---

def _tally_count(doc: ReportDocument, label: SecurityLabel) -> int:
    share = doc.label_tally.get(label.value)
    return share.count if share else 0


def summary_line(doc: ReportDocument) -> str:
    line = (f"{doc.summary.total_findings} findings, {_tally_count(doc, SecurityLabel.CONTEXTUAL_RISK)} contextual risk, "
            f"{_tally_count(doc, SecurityLabel.FALSE_POSITIVE)} false positives")
    if doc.errors:
        line += f", {len(doc.errors)} not analyzed"
    return line


def _table(headers: Sequence[str], rows: Iterable[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    lines += ["| " + " | ".join(cell.replace("|", "\\|").replace("\n", " ") for cell in row) + " |" for row in rows]
    return lines


def render_markdown(doc: ReportDocument) -> str:
    title = f"# Security assessment: {doc.artifact_id}" if doc.artifact_id else "# Security assessment"
    lines = [title, "", summary_line(doc), "", "## Findings", ""]
    lines += _table(["Tool", "Findings"], [(tool, f"{count:,}") for tool, count in doc.summary.per_tool.items()])
    for tool, shares in doc.summary.per_severity.items():
        lines += ["", f"Severity reported by {tool}:", ""]
        lines += _table(["Severity", "Findings"], [(sev, format_share(share)) for sev, share in shares.items()])
    if doc.summary.top_cwes:
        lines += ["", "Most prevalent CWEs:", ""]
        lines += _table(["CWE", "Artifacts", "Findings"],
                        [(item.cwe, str(item.artifact_count), str(item.finding_count)) for item in doc.summary.top_cwes])

    lines += ["", "## Findings distribution", ""]
    lines += _table(["Category", "Findings"], [(name, format_share(share)) for name, share in doc.category_tally.items()])
    lines += ["", "## Security labels", ""]
    lines += _table(["Label", "Findings"], [(name, format_share(share)) for name, share in doc.label_tally.items()])

    lines += ["", "## Security checklist", ""]
    lines += _table(["Question", "Status", "Evidence"],
                    [(item.question, item.status.value, item.evidence) for item in doc.checklist])

    lines += ["", "## Assessments"]
    for record in doc.assessments:
        lines += ["", f"### {record.finding_ref.key}", ""]
        for key, value in assessment_to_dict(record.assessment).items():
            lines.append(f"- **{key}**: {value}")

    if doc.errors:
        lines += ["", "## Analysis errors", ""]
        lines += _table(["Finding", "Error", "Message"],
                        [(e.finding_ref.key, e.error_type, e.message) for e in doc.errors])

    if doc.cost is not None:
        lines += ["", "## Cost", ""]
        lines += _table(["Measure", "Value"], list(format_cost(doc.cost).items()))
    return "\n".join(lines) + "\n"


def render_report(doc: ReportDocument, format: ReportFormat = ReportFormat.MARKDOWN) -> str:
    if ReportFormat(format) == ReportFormat.JSON:
        return doc.model_dump_json(indent=2)
    return render_markdown(doc)


def load_report_document(text: str) -> ReportDocument:
    return ReportDocument.model_validate_json(text)
