"""
models.py - Core records of the security triage pipeline.

This module defines the normalized scanner finding, the identity used to
group findings into "flags", the contextual dimensions and security labels of
the triage taxonomy, and the structured assessment produced for every
finding. All records are frozen pydantic models, so they can be shared
between worker threads without coordination.

The assessment has a canonical text form: a JSON object holding exactly the
nine assessment keys, always in the same order, encoded as UTF-8. Fixtures
written with `serialize_assessment` are byte-stable across runs.
"""

import json
import re
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from security_triage_team.errors import AssessmentParseError

CWE_PATTERN = re.compile(r"^CWE-\d+$")
CVE_PATTERN = re.compile(r"^CVE-\d{4}-\d+$")
_TRI_STATE_PATTERN = re.compile(r"^(?!(?:yes|uncertain)\s*(?:-\s*)?$)(yes|no|uncertain)(?:\s+-\s*(.*))?$", re.DOTALL)


# --- Enumerations ---

class ToolName(str, Enum):
    """Scanner that reported a finding."""
    SEMGREP = "semgrep"
    TRIVY = "trivy"
    BUILTIN = "builtin"


class Category(str, Enum):
    CODE_ISSUE = "code_issue"
    DEPENDENCY_VULN = "dependency_vuln"
    CONFIG_ISSUE = "config_issue"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"
    UNKNOWN = "unknown"


class TriValue(str, Enum):
    YES = "yes"
    NO = "no"
    UNCERTAIN = "uncertain"


class SecurityLabel(str, Enum):
    """Context-aware label assigned to every analyzed finding."""
    CONTEXTUAL_RISK = "CONTEXTUAL_RISK"
    HARDENING_RECOMMENDATION = "HARDENING_RECOMMENDATION"
    BENIGN_RESEARCH_USAGE = "BENIGN_RESEARCH_USAGE"
    FALSE_POSITIVE = "FALSE_POSITIVE"


class LabelCategory(str, Enum):
    SECURITY_RELEVANT = "security_relevant"
    NON_SECURITY = "non_security"


# --- Findings ---

class Finding(BaseModel):
    """One normalized scanner result."""

    model_config = ConfigDict(frozen=True)

    artifact_id: str
    tool: ToolName
    finding_id: str
    category: Category
    severity: Severity = Severity.UNKNOWN
    file: str
    line: Optional[int] = Field(default=None, ge=1)
    message: str = ""
    package: Optional[str] = None
    version: Optional[str] = None
    cwe_ids: Tuple[str, ...] = ()
    cve_ids: Tuple[str, ...] = ()
    cvss: Optional[float] = Field(default=None, ge=0.0, le=10.0)

    @field_validator("cwe_ids")
    @classmethod
    def _check_cwe_ids(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        for cwe in value:
            if not CWE_PATTERN.match(cwe):
                raise ValueError(f"CWE identifier {cwe!r} does not match CWE-<digits>")
        return value

    @field_validator("cve_ids")
    @classmethod
    def _check_cve_ids(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        for cve in value:
            if not CVE_PATTERN.match(cve):
                raise ValueError(f"CVE identifier {cve!r} does not match CVE-YYYY-N")
        return value

    @model_validator(mode="after")
    def _dependency_needs_package(self) -> "Finding":
        if self.category == Category.DEPENDENCY_VULN and not self.package:
            raise ValueError("dependency_vuln findings must name a package")
        return self

    def sort_key(self) -> Tuple:
        return (self.artifact_id, self.file, self.line or 0, self.tool.value,
                self.finding_id, self.message)


class ScanWarning(BaseModel):
    """A non-fatal problem met while reading reports, manifests or files."""

    model_config = ConfigDict(frozen=True)

    source: str
    message: str
    location: Optional[str] = None


class FlagKey(NamedTuple):
    """Identity of a flag: the (tool, rule or CVE id) pair shared by findings."""
    tool: ToolName
    finding_id: str

    def __str__(self) -> str:
        return f"{self.tool.value}:{self.finding_id}"

    @classmethod
    def from_string(cls, text: str) -> "FlagKey":
        tool, _, finding_id = text.partition(":")
        return cls(ToolName(tool), finding_id)


class FindingRef(BaseModel):
    """
    Reference to one finding, used to pair assessments, gold labels and samples.

    Two results of one rule on the same file and line share a reference. They
    stay separate findings in counts, analysis and tallies, but lookups keyed by
    reference (checklist evidence, gold pairing, transcript replay) treat them as
    one location.
    """

    model_config = ConfigDict(frozen=True)

    artifact_id: str
    tool: ToolName
    finding_id: str
    file: str
    line: Optional[int] = None

    @classmethod
    def of(cls, finding: Finding) -> "FindingRef":
        return cls(
            artifact_id=finding.artifact_id,
            tool=finding.tool,
            finding_id=finding.finding_id,
            file=finding.file,
            line=finding.line,
        )

    @property
    def key(self) -> str:
        line = "" if self.line is None else str(self.line)
        return "|".join([self.artifact_id, self.tool.value, self.finding_id, self.file, line])

    @classmethod
    def from_key(cls, text: str) -> "FindingRef":
        parts = text.split("|", 3)
        if len(parts) != 4 or "|" not in parts[3]:
            raise ValueError(f"{text!r} is not a finding reference")
        artifact_id, tool, finding_id, rest = parts
        file, line = rest.rsplit("|", 1)
        return cls(artifact_id=artifact_id, tool=ToolName(tool), finding_id=finding_id, file=file,
                   line=int(line) if line else None)

    def flag(self) -> FlagKey:
        return FlagKey(self.tool, self.finding_id)


# --- Taxonomy dimensions ---

class TriState(BaseModel):
    """A yes / no / uncertain judgement with its explanation."""

    model_config = ConfigDict(frozen=True)

    value: TriValue
    note: str = ""

    @model_validator(mode="after")
    def _note_required(self) -> "TriState":
        if self.value != TriValue.NO and not self.note.strip():
            raise ValueError(f"a '{self.value.value}' judgement needs an explanatory note")
        return self

    def render(self) -> str:
        if not self.note:
            return self.value.value
        return f"{self.value.value} - {self.note}"

    @classmethod
    def parse(cls, text: str) -> "TriState":
        match = _TRI_STATE_PATTERN.match(text.strip())
        if not match:
            raise ValueError(f"{text!r} is not 'yes|no|uncertain - <note>' with a note after yes or uncertain")
        return cls(value=TriValue(match.group(1)), note=(match.group(2) or "").strip())

    @classmethod
    def yes(cls, note: str) -> "TriState":
        return cls(value=TriValue.YES, note=note)

    @classmethod
    def no(cls, note: str = "") -> "TriState":
        return cls(value=TriValue.NO, note=note)

    @classmethod
    def uncertain(cls, note: str) -> "TriState":
        return cls(value=TriValue.UNCERTAIN, note=note)


class ContextDimensions(BaseModel):
    """The four contextual dimensions judged for every finding."""

    model_config = ConfigDict(frozen=True)

    attacker_controlled_input: TriState
    reachability: TriState
    execution_context: str = Field(min_length=1)
    exploitation_condition: str = Field(min_length=1)


# --- Assessment ---

ASSESSMENT_KEYS: Tuple[str, ...] = (
    "security_label",
    "code_purpose",
    "execution_context",
    "required_conditions_for_exploit",
    "input_controlled_by_attacker",
    "reachable_in_artifact_execution",
    "evidence_snippet",
    "reasoning",
    "recommendation",
)

_TRI_STATE_FIELDS = ("input_controlled_by_attacker", "reachable_in_artifact_execution")


class Assessment(BaseModel):
    """Structured verdict for one finding; field order is the canonical key order."""

    model_config = ConfigDict(frozen=True)

    security_label: SecurityLabel
    code_purpose: str = Field(description="What the flagged code or file is for.")
    execution_context: str = Field(description="Where and how the code runs in the artifact.")
    required_conditions_for_exploit: str = Field(description="What an exploit would need.")
    input_controlled_by_attacker: str = Field(description="'yes|no|uncertain - <note>'")
    reachable_in_artifact_execution: str = Field(description="'yes|no|uncertain - <note>'")
    evidence_snippet: str = Field(description="Verbatim evidence from the repository.")
    reasoning: str = Field(description="Why the label was chosen.")
    recommendation: str = Field(description="What the authors should do.")


class ValidationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    errors: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors


def label_category(label: SecurityLabel) -> LabelCategory:
    """Collapse a security label into the security-relevant / non-security split."""
    if label == SecurityLabel.FALSE_POSITIVE:
        return LabelCategory.NON_SECURITY
    return LabelCategory.SECURITY_RELEVANT


def validate_assessment(assessment: Assessment) -> ValidationResult:
    """Check every assessment invariant, naming each violated field once."""
    errors: List[str] = []
    for key in ASSESSMENT_KEYS:
        value = getattr(assessment, key)
        text = value.value if isinstance(value, Enum) else value
        if not isinstance(text, str) or not text.strip():
            errors.append(key)
            continue
        if key in _TRI_STATE_FIELDS and not _TRI_STATE_PATTERN.match(text.strip()):
            errors.append(key)
    return ValidationResult(errors=tuple(errors))


def assessment_to_dict(assessment: Assessment) -> Dict[str, str]:
    return {
        key: (getattr(assessment, key).value if key == "security_label" else getattr(assessment, key))
        for key in ASSESSMENT_KEYS
    }


def serialize_assessment(assessment: Assessment) -> str:
    """Render an assessment as canonical text (fixed key order, UTF-8 safe)."""
    result = validate_assessment(assessment)
    if not result.ok:
        raise ValueError(f"Cannot serialize an invalid assessment; bad fields: {', '.join(result.errors)}")
    return json.dumps(assessment_to_dict(assessment), indent=2, ensure_ascii=False)


def assessment_from_dict(data: Dict[str, object]) -> Assessment:
    """Build an assessment from a decoded JSON object, rejecting unknown or missing keys."""
    for key in data:
        if key not in ASSESSMENT_KEYS:
            raise AssessmentParseError(f"Unknown assessment key: {key}", key=key)
    for key in ASSESSMENT_KEYS:
        if key not in data:
            raise AssessmentParseError(f"Missing assessment key: {key}", key=key)
        if not isinstance(data[key], str):
            raise AssessmentParseError(f"Assessment key {key} must hold a string", key=key)
    try:
        label = SecurityLabel(data["security_label"])
    except ValueError:
        raise AssessmentParseError(
            f"Unknown security label: {data['security_label']!r}", key="security_label"
        )
    values = {key: data[key] for key in ASSESSMENT_KEYS}
    values["security_label"] = label
    return Assessment(**values)


def parse_assessment(text: str) -> Assessment:
    """Parse canonical (or any JSON-object) assessment text."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise AssessmentParseError(f"Assessment text is not valid JSON: {e}", key="<document>")
    if not isinstance(data, dict):
        raise AssessmentParseError("Assessment text must be a JSON object", key="<document>")
    return assessment_from_dict(data)


def flag_key(finding: Finding) -> FlagKey:
    return FlagKey(finding.tool, finding.finding_id)


# --- Newline-delimited findings ---

def findings_to_jsonl(findings: Iterable[Finding]) -> str:
    return "".join(finding.model_dump_json() + "\n" for finding in findings)


def findings_from_jsonl(text: str) -> List[Finding]:
    return [Finding.model_validate_json(line) for line in text.splitlines() if line.strip()]
