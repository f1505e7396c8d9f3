"""
heuristic.py - Deterministic labeling of findings from their evidence bundle.

The decision order is strict:

1. a dependency nobody imports, or code that never runs, is a FALSE_POSITIVE;
2. content under a test, demo or vendored path, with neither attacker input nor a
   confirmed run path, is BENIGN_RESEARCH_USAGE;
3. attacker input and reachability both at least `uncertain`, one of them
   `yes`, is a CONTEXTUAL_RISK;
4. everything else is a HARDENING_RECOMMENDATION.
"""

import re
from typing import Optional

from security_triage_team.models import (
    Assessment,
    Category,
    Finding,
    SecurityLabel,
    TriValue,
)
from security_triage_team.reasoning.evidence import EvidenceBundle

_FIXED_IN = re.compile(r"\(fixed in ([^)]+)\)")

_CWE_FIXES = {
    "CWE-78": ("pass the command as an argument list with shell=False and strictly validate every "
               "externally supplied value before it reaches the command"),
    "CWE-502": ("load only trusted files, or switch to a safe loader or format "
                "(yaml.safe_load, torch.load(weights_only=True), JSON)"),
    "CWE-95": "replace eval/exec with ast.literal_eval or an explicit dispatch table",
    "CWE-798": "revoke the embedded credential and load secrets from the environment or a secret store",
}


def heuristic_decide(evidence: EvidenceBundle, finding: Finding) -> SecurityLabel:
    """Map an evidence bundle to exactly one security label."""
    attacker = evidence.dimensions.attacker_controlled_input.value
    reach = evidence.dimensions.reachability.value

    if finding.category == Category.DEPENDENCY_VULN:
        if evidence.location_resolved and evidence.dependency_usage_hits == 0:
            return SecurityLabel.FALSE_POSITIVE
    elif reach == TriValue.NO:
        return SecurityLabel.FALSE_POSITIVE

    if evidence.demo_path and TriValue.YES not in (attacker, reach):
        return SecurityLabel.BENIGN_RESEARCH_USAGE

    live = {TriValue.YES, TriValue.UNCERTAIN}
    if attacker in live and reach in live and TriValue.YES in (attacker, reach):
        return SecurityLabel.CONTEXTUAL_RISK
    return SecurityLabel.HARDENING_RECOMMENDATION


def _fixed_version(finding: Finding) -> Optional[str]:
    match = _FIXED_IN.search(finding.message)
    return match.group(1).strip() if match else None


def _weakness(finding: Finding) -> str:
    ids = ", ".join(finding.cwe_ids + finding.cve_ids)
    return f"{finding.finding_id} ({ids})" if ids else finding.finding_id


def _code_purpose(evidence: EvidenceBundle, finding: Finding) -> str:
    if finding.category == Category.DEPENDENCY_VULN:
        manifest = evidence.manifest.manifest if evidence.manifest else finding.file
        version = f" {finding.version}" if finding.version else ""
        return f"Third-party dependency {finding.package}{version} declared in {manifest}."
    if not evidence.location_resolved:
        return f"Unknown: {finding.file} could not be inspected."
    if evidence.span is not None and evidence.span.kind.value != "module":
        return f"{evidence.span.kind.value.capitalize()} {evidence.span.name}() in {finding.file}."
    if evidence.code_file:
        return f"Module-level code in {finding.file}."
    if evidence.research_demo_markers:
        return f"Bundled test or demo asset {finding.file}."
    return f"Bundled file {finding.file}."


def _evidence_snippet(evidence: EvidenceBundle, finding: Finding) -> str:
    if finding.category == Category.DEPENDENCY_VULN:
        if evidence.manifest is None:
            return f"No manifest in the repository declares {finding.package}."
        pinned = f"{evidence.manifest.package}{evidence.manifest.version_constraint or ''}"
        if not evidence.usage_hits:
            return (f"{evidence.manifest.manifest} pins {pinned}; no import or qualified use of "
                    f"{finding.package} appears anywhere else in the codebase.")
        first = evidence.usage_hits[0]
        return f"{evidence.manifest.manifest} pins {pinned}; {first.path}:{first.line}: {first.text}"
    if not evidence.location_resolved:
        return f"{finding.file}:{finding.line or '?'} could not be read from the repository."
    span = evidence.span
    if span is not None and span.kind.value != "module":
        return (f"{finding.file} lines {span.start_line}-{span.end_line} define {span.name}() with "
                f"{evidence.flagged_text}")
    if finding.line is not None:
        return f"In {finding.file}, line {finding.line}: {evidence.flagged_text}"
    return f"{finding.file}: {finding.message}"


def _reasoning(evidence: EvidenceBundle, finding: Finding, label: SecurityLabel) -> str:
    dims = evidence.dimensions
    where = f"{finding.file}:{finding.line}" if finding.line else finding.file
    opening = f"{finding.tool.value} reported {_weakness(finding)} at {where}."
    facts = (f" Attacker-controlled input: {dims.attacker_controlled_input.render()}."
             f" Reachability: {dims.reachability.render()}.")
    if label == SecurityLabel.FALSE_POSITIVE:
        verdict = (" The weakness requires a reachable code path, and none exists in the artifact, so the report"
                   " does not describe a real problem in this context.")
    elif label == SecurityLabel.BENIGN_RESEARCH_USAGE:
        markers = "; ".join(evidence.research_demo_markers)
        verdict = (f" The flagged content is a test, demo or vendored asset ({markers}) that the artifact needs"
                   f" for reproducibility, and no attacker input reaches it.")
    elif label == SecurityLabel.CONTEXTUAL_RISK:
        verdict = (f" Both exploitation preconditions hold under realistic use of the artifact:"
                   f" {dims.exploitation_condition}")
    else:
        verdict = (" The practice is unsafe, but the preconditions for exploitation are not both met in the"
                   " artifact's context, so present impact is low.")
    return opening + facts + verdict


def _recommendation(evidence: EvidenceBundle, finding: Finding, label: SecurityLabel) -> str:
    if finding.category == Category.DEPENDENCY_VULN:
        fixed = _fixed_version(finding)
        target = f"{fixed} or later" if fixed else "a patched release"
        if label == SecurityLabel.FALSE_POSITIVE:
            manifest = evidence.manifest.manifest if evidence.manifest else "the manifest"
            return (f"No artifact-level fix is needed. Remove unused pin of {finding.package} from {manifest}, "
                    f"or upgrade it to {target} if future code starts using it.")
        return f"Upgrade {finding.package} to {target}."
    fix = next((_CWE_FIXES[cwe] for cwe in finding.cwe_ids if cwe in _CWE_FIXES), None)
    if label == SecurityLabel.FALSE_POSITIVE:
        return "No action is required for artifact evaluation; the flagged code does not run. Remove it if it is dead."
    if label == SecurityLabel.BENIGN_RESEARCH_USAGE:
        return (f"No artifact-level action is required. Keep {finding.file} documented as a test asset and "
                f"never reuse it outside the artifact.")
    if label == SecurityLabel.CONTEXTUAL_RISK:
        return (f"Fix before release: {fix}." if fix
                else "Fix before release: validate or sanitize the external input reaching the flagged code.")
    return f"Harden the code: {fix}." if fix else "Harden the code following the scanner's guidance."


def build_assessment(evidence: EvidenceBundle, finding: Finding, label: SecurityLabel) -> Assessment:
    """Fill the nine assessment fields from templates."""
    dims = evidence.dimensions
    return Assessment(
        security_label=label,
        code_purpose=_code_purpose(evidence, finding),
        execution_context=dims.execution_context,
        required_conditions_for_exploit=dims.exploitation_condition,
        input_controlled_by_attacker=dims.attacker_controlled_input.render(),
        reachable_in_artifact_execution=dims.reachability.render(),
        evidence_snippet=_evidence_snippet(evidence, finding),
        reasoning=_reasoning(evidence, finding, label),
        recommendation=_recommendation(evidence, finding, label),
    )
