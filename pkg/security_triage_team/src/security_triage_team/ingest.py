"""
ingest.py - Turn scanner reports and the built-in pattern scan into Findings.

Two adapters read scanner-native JSON (Semgrep's `results` array and Trivy's
`Results[].Vulnerabilities` / `Results[].Misconfigurations`), and a small
pattern scanner covers the most prevalent weakness classes without any
external binary. `merge_and_index` combines the batches into a `FindingSet`.

Adapters never drop an entry silently: every entry becomes a Finding, or an
`IngestError` naming its index is raised, and every lossy mapping (such as an
unknown severity string) leaves a `ScanWarning`.
"""

import bisect
import fnmatch
import json
import logging
import re
import tomllib
from collections import defaultdict
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from security_triage_team.errors import BinaryContentError, ConfigError, IngestError, NavigationError
from security_triage_team.models import (
    CVE_PATTERN,
    CWE_PATTERN,
    Category,
    Finding,
    FlagKey,
    ScanWarning,
    Severity,
    ToolName,
    flag_key,
)
from security_triage_team.repo_context import RepoHandle

logger = logging.getLogger(__name__)

DEFAULT_RULES_RESOURCE = "config/builtin_rules.toml"

SEMGREP_SEVERITY: Dict[str, Severity] = {
    "error": Severity.HIGH,
    "warning": Severity.MEDIUM,
    "info": Severity.LOW,
    "inventory": Severity.LOW,
    "experiment": Severity.LOW,
    "critical": Severity.CRITICAL,
    "high": Severity.HIGH,
    "medium": Severity.MEDIUM,
    "low": Severity.LOW,
}

TRIVY_SEVERITY: Dict[str, Severity] = {
    "critical": Severity.CRITICAL,
    "high": Severity.HIGH,
    "medium": Severity.MEDIUM,
    "low": Severity.LOW,
    "unknown": Severity.UNKNOWN,
}

_CWE_IN_TEXT = re.compile(r"CWE-\d+")


class RawScannerReport(BaseModel):
    """A parsed scanner report before normalization."""

    model_config = ConfigDict(frozen=True)

    tool: ToolName
    payload: Any
    source_path: str

    @field_validator("tool")
    @classmethod
    def _external_tool(cls, value: ToolName) -> ToolName:
        if value == ToolName.BUILTIN:
            raise ValueError("builtin findings come from builtin_scan, not from a report")
        return value


class BuiltinRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    rule_id: str
    pattern: str
    regex: bool = True
    file_glob: str = "*"
    cwe: str
    severity: Severity = Severity.MEDIUM
    category: Category = Category.CODE_ISSUE
    message_template: str = "{rule_id} matched in {path}"

    @field_validator("cwe")
    @classmethod
    def _check_cwe(cls, value: str) -> str:
        if not CWE_PATTERN.match(value):
            raise ValueError(f"CWE identifier {value!r} does not match CWE-<digits>")
        return value

    @field_validator("category")
    @classmethod
    def _not_dependency(cls, value: Category) -> Category:
        if value == Category.DEPENDENCY_VULN:
            raise ValueError("pattern rules cannot report dependency vulnerabilities")
        return value

    @field_validator("message_template")
    @classmethod
    def _check_template(cls, value: str) -> str:
        try:
            value.format(rule_id="", path="", line=0, match="")
        except (KeyError, IndexError, ValueError) as e:
            raise ValueError(f"message template {value!r} only takes {{rule_id}}, {{path}}, {{line}} and {{match}}: {e!r}")
        return value

    def compiled(self) -> re.Pattern:
        source = self.pattern if self.regex else re.escape(self.pattern)
        return re.compile(source, re.MULTILINE)

    def applies_to(self, path: str) -> bool:
        return fnmatch.fnmatch(path, self.file_glob) or fnmatch.fnmatch(PurePosixPath(path).name, self.file_glob)


class FindingSet:
    """All findings of a run plus lookups by flag and by artifact."""

    def __init__(self, findings: Iterable[Finding]):
        self._findings: Tuple[Finding, ...] = tuple(findings)
        by_flag: Dict[FlagKey, List[Finding]] = defaultdict(list)
        by_artifact: Dict[str, List[Finding]] = defaultdict(list)
        for finding in self._findings:
            by_flag[flag_key(finding)].append(finding)
            by_artifact[finding.artifact_id].append(finding)
        self._by_flag = {key: tuple(group) for key, group in by_flag.items()}
        self._by_artifact = {key: tuple(group) for key, group in by_artifact.items()}

    @property
    def findings(self) -> Tuple[Finding, ...]:
        return self._findings

    @property
    def by_flag(self) -> Mapping[FlagKey, Tuple[Finding, ...]]:
        return self._by_flag

    @property
    def by_artifact(self) -> Mapping[str, Tuple[Finding, ...]]:
        return self._by_artifact

    def __len__(self) -> int:
        return len(self._findings)

    def __iter__(self):
        return iter(self._findings)


# --- Report loading ---

def detect_tool(payload: Any) -> Optional[ToolName]:
    """Recognize a report by its structural signature."""
    if isinstance(payload, dict):
        if isinstance(payload.get("results"), list):
            return ToolName.SEMGREP
        if "Results" in payload or "SchemaVersion" in payload or "ArtifactName" in payload:
            return ToolName.TRIVY
    return None


def load_report(path: Path | str, tool: ToolName) -> RawScannerReport:
    """
    Read a scanner report from disk.

    Raises:
        IngestError: If the file is not JSON or does not look like a `tool` report.
    """
    source = Path(path)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestError(f"{source} is not valid JSON: {e}")
    detected = detect_tool(payload)
    if detected != tool:
        raise IngestError(f"{source} does not have the structure of a {tool.value} report")
    return RawScannerReport(tool=tool, payload=payload, source_path=str(source))


def _relative(path: str, repo_root: Optional[str]) -> str:
    text = path.replace("\\", "/")
    if repo_root:
        root = repo_root.replace("\\", "/").rstrip("/") + "/"
        if text.startswith(root):
            text = text[len(root):]
    while text.startswith("./"):
        text = text[2:]
    return text


def _severity(raw: Any, table: Dict[str, Severity], location: str, warnings: List[ScanWarning]) -> Severity:
    if raw is None or raw == "":
        warnings.append(ScanWarning(source="ingest", message="Missing severity, using unknown", location=location))
        return Severity.UNKNOWN
    mapped = table.get(str(raw).strip().lower())
    if mapped is None:
        warnings.append(ScanWarning(
            source="ingest", message=f"Unmapped severity {raw!r}, using unknown", location=location,
        ))
        return Severity.UNKNOWN
    return mapped


def _cwe_ids(raw: Any) -> Tuple[str, ...]:
    if raw is None:
        return ()
    items = raw if isinstance(raw, list) else [raw]
    found: List[str] = []
    for item in items:
        for cwe in _CWE_IN_TEXT.findall(str(item)):
            if cwe not in found:
                found.append(cwe)
    return tuple(found)


def _flush(warnings: List[ScanWarning], sink: Optional[List[ScanWarning]]) -> None:
    for warning in warnings:
        logger.warning("%s (%s)", warning.message, warning.location)
    if sink is not None:
        sink.extend(warnings)


# --- Semgrep ---

def ingest_semgrep_report(
    report: RawScannerReport,
    artifact_id: str,
    repo_root: Optional[str] = None,
    warnings: Optional[List[ScanWarning]] = None,
) -> List[Finding]:
    """
    One code_issue Finding per entry of a Semgrep `results` array.

    Raises:
        IngestError: For a malformed entry, naming its index.
    """
    if report.tool != ToolName.SEMGREP:
        raise IngestError(f"{report.source_path} is a {report.tool.value} report, not semgrep")
    results = report.payload.get("results") if isinstance(report.payload, dict) else None
    if not isinstance(results, list):
        raise IngestError(f"{report.source_path} has no results array")

    notes: List[ScanWarning] = []
    findings: List[Finding] = []
    for index, entry in enumerate(results):
        location = f"{report.source_path}#results[{index}]"
        if not isinstance(entry, dict) or not entry.get("check_id") or not entry.get("path"):
            raise IngestError(f"Semgrep result {index} lacks check_id or path", entry_index=index)
        extra = entry.get("extra") or {}
        metadata = extra.get("metadata") or {}
        line = (entry.get("start") or {}).get("line")
        try:
            findings.append(Finding(
                artifact_id=artifact_id,
                tool=ToolName.SEMGREP,
                finding_id=str(entry["check_id"]),
                category=Category.CODE_ISSUE,
                severity=_severity(extra.get("severity"), SEMGREP_SEVERITY, location, notes),
                file=_relative(str(entry["path"]), repo_root),
                line=line if isinstance(line, int) and line >= 1 else None,
                message=str(extra.get("message") or "").strip(),
                cwe_ids=_cwe_ids(metadata.get("cwe")),
            ))
        except ValidationError as e:
            raise IngestError(f"Semgrep result {index} is malformed: {e}", entry_index=index)
    for error in report.payload.get("errors") or []:
        message = error.get("message") if isinstance(error, dict) else str(error)
        notes.append(ScanWarning(source="semgrep", message=f"Scanner error: {message}", location=report.source_path))
    _flush(notes, warnings)
    return findings


# --- Trivy ---

def _highest_cvss(raw: Any) -> Optional[float]:
    """Highest V3 score across vendors, falling back to V2."""
    if not isinstance(raw, dict):
        return None
    v3 = [v.get("V3Score") for v in raw.values() if isinstance(v, dict) and v.get("V3Score") is not None]
    if v3:
        return max(float(score) for score in v3)
    v2 = [v.get("V2Score") for v in raw.values() if isinstance(v, dict) and v.get("V2Score") is not None]
    return max(float(score) for score in v2) if v2 else None


def ingest_trivy_report(
    report: RawScannerReport,
    artifact_id: str,
    repo_root: Optional[str] = None,
    warnings: Optional[List[ScanWarning]] = None,
) -> List[Finding]:
    """
    One dependency_vuln Finding per vulnerability and one config_issue Finding
    per failed misconfiguration check, across all `Results` sections.

    Raises:
        IngestError: For a malformed entry, naming its index in report order.
    """
    if report.tool != ToolName.TRIVY:
        raise IngestError(f"{report.source_path} is a {report.tool.value} report, not trivy")
    if not isinstance(report.payload, dict):
        raise IngestError(f"{report.source_path} is not a JSON object")

    notes: List[ScanWarning] = []
    findings: List[Finding] = []
    index = 0
    for section in report.payload.get("Results") or []:
        target = _relative(str(section.get("Target") or ""), repo_root) if isinstance(section, dict) else ""
        for vuln in (section.get("Vulnerabilities") or []) if isinstance(section, dict) else []:
            location = f"{report.source_path}#vulnerability[{index}]"
            if not isinstance(vuln, dict) or not vuln.get("VulnerabilityID") or not vuln.get("PkgName"):
                raise IngestError(f"Trivy vulnerability {index} lacks VulnerabilityID or PkgName", entry_index=index)
            vuln_id = str(vuln["VulnerabilityID"])
            cve_ids = tuple(c for c in [vuln_id, *(vuln.get("VendorIDs") or [])] if CVE_PATTERN.match(str(c)))
            fixed = vuln.get("FixedVersion")
            title = vuln.get("Title") or vuln.get("Description") or ""
            message = f"{title} (fixed in {fixed})" if fixed else str(title)
            try:
                findings.append(Finding(
                    artifact_id=artifact_id,
                    tool=ToolName.TRIVY,
                    finding_id=vuln_id,
                    category=Category.DEPENDENCY_VULN,
                    severity=_severity(vuln.get("Severity"), TRIVY_SEVERITY, location, notes),
                    file=target or str(vuln.get("PkgPath") or ""),
                    message=message.strip(),
                    package=str(vuln["PkgName"]),
                    version=vuln.get("InstalledVersion"),
                    cwe_ids=_cwe_ids(vuln.get("CweIDs")),
                    cve_ids=tuple(dict.fromkeys(cve_ids)),
                    cvss=_highest_cvss(vuln.get("CVSS")),
                ))
            except ValidationError as e:
                raise IngestError(f"Trivy vulnerability {index} is malformed: {e}", entry_index=index)
            index += 1
        for misconfig in (section.get("Misconfigurations") or []) if isinstance(section, dict) else []:
            location = f"{report.source_path}#misconfiguration[{index}]"
            if not isinstance(misconfig, dict) or not (misconfig.get("ID") or misconfig.get("AVDID")):
                raise IngestError(f"Trivy misconfiguration {index} lacks an ID", entry_index=index)
            if str(misconfig.get("Status", "FAIL")).upper() != "FAIL":
                index += 1
                continue
            start = (misconfig.get("CauseMetadata") or {}).get("StartLine")
            findings.append(Finding(
                artifact_id=artifact_id,
                tool=ToolName.TRIVY,
                finding_id=str(misconfig.get("ID") or misconfig.get("AVDID")),
                category=Category.CONFIG_ISSUE,
                severity=_severity(misconfig.get("Severity"), TRIVY_SEVERITY, location, notes),
                file=target,
                line=start if isinstance(start, int) and start >= 1 else None,
                message=str(misconfig.get("Message") or misconfig.get("Title") or "").strip(),
            ))
            index += 1
    _flush(notes, warnings)
    return findings


# --- Builtin pattern scan ---

def load_rules(path: Optional[Path | str] = None) -> List[BuiltinRule]:
    """
    Load a rule set from a TOML or JSON file holding a `rules` list.

    Without a path the packaged default rule set is used.

    Raises:
        ConfigError: If the file is unreadable or not a table of rules, a rule
            or its message template is invalid, a pattern does not compile,
            or two rules share an id.
    """
    try:
        if path is None:
            text = resources.files("security_triage_team").joinpath(DEFAULT_RULES_RESOURCE).read_text("utf-8")
            data = tomllib.loads(text)
        elif Path(path).suffix.lower() == ".json":
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        else:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot read rule file {path}: {e}")

    if not isinstance(data, dict) or not isinstance(data.get("rules") or [], list):
        raise ConfigError(f"Rule file {path} must hold a table with a `rules` list")

    rules: List[BuiltinRule] = []
    seen = set()
    for position, raw in enumerate(data.get("rules") or []):
        try:
            rule = BuiltinRule.model_validate(raw)
            rule.compiled()
        except ValidationError as e:
            raise ConfigError(f"Rule {position} is invalid: {e}")
        except re.error as e:
            raise ConfigError(f"Rule {raw.get('rule_id', position)} has a bad pattern: {e}")
        if rule.rule_id in seen:
            raise ConfigError(f"Duplicate rule id {rule.rule_id}")
        seen.add(rule.rule_id)
        rules.append(rule)
    return rules


def builtin_scan(
    repo: RepoHandle,
    rules: Sequence[BuiltinRule],
    artifact_id: str,
    warnings: Optional[List[ScanWarning]] = None,
) -> List[Finding]:
    """
    Apply pattern rules to every text file of the snapshot.

    Each match yields one Finding located at the line where the match starts;
    several matches of one rule on the same line collapse into one Finding.
    Output is sorted by (path, line, rule_id).
    """
    compiled = [(rule, rule.compiled()) for rule in rules]
    notes: List[ScanWarning] = []
    findings: List[Finding] = []
    for path in repo.file_index:
        applicable = [(rule, pattern) for rule, pattern in compiled if rule.applies_to(path)]
        if not applicable:
            continue
        try:
            text = repo.text(path)
        except BinaryContentError:
            logger.debug("Skipping binary file %s", path)
            continue
        except (NavigationError, OSError) as e:
            notes.append(ScanWarning(source="builtin", message=f"Unreadable file skipped: {e}", location=path))
            continue
        line_starts = [0] + [m.end() for m in re.finditer("\n", text)]
        for rule, pattern in applicable:
            lines_hit = set()
            for match in pattern.finditer(text):
                line = _line_of(line_starts, match.start())
                if line in lines_hit:
                    continue
                lines_hit.add(line)
                findings.append(Finding(
                    artifact_id=artifact_id,
                    tool=ToolName.BUILTIN,
                    finding_id=rule.rule_id,
                    category=rule.category,
                    severity=rule.severity,
                    file=path,
                    line=line,
                    message=rule.message_template.format(rule_id=rule.rule_id, path=path, line=line,
                                                         match=match.group(0).strip()),
                    cwe_ids=(rule.cwe,),
                ))
    _flush(notes, warnings)
    return sorted(findings, key=lambda f: (f.file, f.line or 0, f.finding_id))


def _line_of(line_starts: List[int], offset: int) -> int:
    return bisect.bisect_right(line_starts, offset)


# --- Merge ---

def merge_and_index(batches: Iterable[Iterable[Finding]]) -> FindingSet:
    """Concatenate batches in order and index them by flag and artifact."""
    merged: List[Finding] = []
    for batch in batches:
        merged.extend(batch)
    finding_set = FindingSet(merged)
    logger.info("Indexed %d findings over %d flags", len(finding_set), len(finding_set.by_flag))
    return finding_set
