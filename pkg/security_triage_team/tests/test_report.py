import pytest
from pydantic import ValidationError

from conftest import make_assessment, make_finding
from security_triage_team.corpus_stats import Share, compute_summary
from security_triage_team.ingest import FindingSet
from security_triage_team.models import Category, FindingRef, SecurityLabel, Severity, ToolName
from security_triage_team.reasoning.agent import analyze_finding
from security_triage_team.reasoning.backends import HeuristicBackend
from security_triage_team.repo_context import RepoHandle
from security_triage_team.report import (
    CHECKLIST_QUESTIONS,
    AssessmentRecord,
    ChecklistInputs,
    ChecklistStatus,
    FindingError,
    ReportDocument,
    ReportFormat,
    category_tally,
    checklist_inputs,
    format_share,
    label_tally,
    load_report_document,
    render_checklist,
    render_markdown,
    render_report,
    summary_line,
)

CR = SecurityLabel.CONTEXTUAL_RISK
HR = SecurityLabel.HARDENING_RECOMMENDATION
BRU = SecurityLabel.BENIGN_RESEARCH_USAGE
FP = SecurityLabel.FALSE_POSITIVE


def _statuses(items):
    return [item.status.value for item in items]


def _assess(findings, repo):
    return {FindingRef.of(f).key: analyze_finding(f, repo, HeuristicBackend())[0] for f in findings}


def _requests_vuln(severity=Severity.MEDIUM, package="requests"):
    return make_finding(artifact_id="unused_dependency", tool=ToolName.TRIVY, finding_id="CVE-2023-32681",
                        category=Category.DEPENDENCY_VULN, file="requirements.txt", line=None,
                        package=package, version="2.29.0", severity=severity)


# --- Tallies ---

def test_label_and_category_tallies():
    assessments = [make_assessment(FP)] * 146 + [make_assessment(CR)] * 34 + [make_assessment(HR)] * 50 \
        + [make_assessment(BRU)] * 20
    labels = label_tally(assessments)
    assert list(labels) == ["CONTEXTUAL_RISK", "HARDENING_RECOMMENDATION", "BENIGN_RESEARCH_USAGE", "FALSE_POSITIVE"]
    assert {name: format_share(share) for name, share in labels.items()} == {
        "FALSE_POSITIVE": "146 (58.40%)",
        "CONTEXTUAL_RISK": "34 (13.60%)",
        "HARDENING_RECOMMENDATION": "50 (20.00%)",
        "BENIGN_RESEARCH_USAGE": "20 (8.00%)",
    }
    categories = category_tally(assessments)
    assert list(categories) == ["non_security", "security_relevant"]
    assert format_share(categories["security_relevant"]) == "104 (41.60%)"
    assert sum(share.count for share in labels.values()) == 250


def test_tallies_omit_empty_labels():
    assert list(label_tally([make_assessment(HR)])) == ["HARDENING_RECOMMENDATION"]
    assert label_tally([]) == {}
    assert category_tally([]) == {}


# --- Checklist ---

def test_checklist_for_vendored_test_key(bootsign_repo):
    finding = make_finding(artifact_id="bootsign_keys", tool=ToolName.BUILTIN, finding_id="builtin.generic.private-key",
                           file="tools/vendor/bootsign/TestCert.pem", line=1, cwe_ids=("CWE-798",),
                           severity=Severity.HIGH)
    items = render_checklist(checklist_inputs([finding], _assess([finding], bootsign_repo), bootsign_repo))
    assert [item.question for item in items] == list(CHECKLIST_QUESTIONS)
    assert _statuses(items) == ["no", "yes", "unclear", "yes", "unclear"]
    assert items[3].evidence.startswith("README.md:")
    assert "python analyze.py" in items[3].evidence


def test_checklist_for_shell_injection(host_probe_repo):
    finding = make_finding(artifact_id="host_probe", file="box.py", line=19, cwe_ids=("CWE-78",))
    items = render_checklist(checklist_inputs([finding], _assess([finding], host_probe_repo), host_probe_repo))
    assert _statuses(items)[:2] == ["yes", "no"]
    assert FindingRef.of(finding).key in items[0].evidence
    assert FindingRef.of(finding).key in items[1].evidence
    assert items[3].status == ChecklistStatus.YES


def test_checklist_for_unused_dependency(unused_dependency_repo):
    finding = _requests_vuln()
    inputs = checklist_inputs([finding], _assess([finding], unused_dependency_repo), unused_dependency_repo,
                              dependency_scan_ran=True)
    assert inputs.dependency_usage == {"requests": 0}
    items = render_checklist(inputs)
    assert _statuses(items) == ["no", "yes", "yes", "yes", "yes"]
    assert "offline" in items[4].evidence


def test_critical_dependency_statuses(unused_dependency_repo):
    unused = _requests_vuln(Severity.CRITICAL)
    items = render_checklist(checklist_inputs([unused], {}, unused_dependency_repo, dependency_scan_ran=True))
    assert items[2].status == ChecklistStatus.YES
    assert "requests" in items[2].evidence

    used = _requests_vuln(Severity.CRITICAL, package="numpy")
    items = render_checklist(checklist_inputs([used], {}, unused_dependency_repo, dependency_scan_ran=True))
    assert items[2].status == ChecklistStatus.NO


def test_unassessed_unsafe_operation_is_not_restricted():
    finding = make_finding(cwe_ids=("CWE-502",))
    items = render_checklist(ChecklistInputs(findings=(finding,)))
    assert items[0].status == ChecklistStatus.UNCLEAR
    assert items[1].status == ChecklistStatus.NO


def test_research_demo_unsafe_operation_counts_as_restricted():
    finding = make_finding(cwe_ids=("CWE-95",))
    key = FindingRef.of(finding).key
    items = render_checklist(ChecklistInputs(findings=(finding,), assessments={
        key: make_assessment(BRU, input_controlled_by_attacker="uncertain - payload is bundled"),
    }))
    assert items[0].status == ChecklistStatus.UNCLEAR
    assert items[1].status == ChecklistStatus.YES
    assert key in items[1].evidence


def test_empty_repository_checklist_is_unclear(make_repo):
    repo = RepoHandle.open(make_repo({}))
    items = render_checklist(checklist_inputs([], {}, repo))
    assert _statuses(items) == ["unclear"] * 5


# --- Document ---

def _document():
    findings = [
        make_finding(artifact_id="host_probe", file="box.py", line=19, cwe_ids=("CWE-78",)),
        make_finding(artifact_id="host_probe", file="main.py", line=4, finding_id="rule.other"),
        make_finding(artifact_id="host_probe", file="gone.py", line=2, finding_id="rule.missing"),
    ]
    records = (
        AssessmentRecord(finding_ref=FindingRef.of(findings[0]),
                         assessment=make_assessment(CR, evidence_snippet="box.py:19: Popen(cmd, shell=True) | grep")),
        AssessmentRecord(finding_ref=FindingRef.of(findings[1]), assessment=make_assessment(HR)),
    )
    assessments = [record.assessment for record in records]
    return ReportDocument(
        artifact_id="host_probe",
        summary=compute_summary(FindingSet(findings)),
        assessments=records,
        errors=(FindingError(finding_ref=FindingRef.of(findings[2]), error_type="BudgetExceededError",
                             message="no final answer within 20 steps"),),
        label_tally=label_tally(assessments),
        category_tally=category_tally(assessments),
        checklist=render_checklist(ChecklistInputs(findings=tuple(findings))),
    )


def test_summary_line():
    assert summary_line(_document()) == "3 findings, 1 contextual risk, 0 false positives, 1 not analyzed"


def test_markdown_report():
    text = render_markdown(_document())
    assert text.startswith("# Security assessment: host_probe\n")
    assert "## Security checklist" in text
    assert "| CONTEXTUAL_RISK | 1 (50.00%) |" in text
    assert "### host_probe|semgrep|rule.example|box.py|19" in text
    assert "- **security_label**: CONTEXTUAL_RISK" in text
    assert "- **evidence_snippet**: box.py:19: Popen(cmd, shell=True) | grep" in text
    assert "| host_probe\\|semgrep\\|rule.missing\\|gone.py\\|2 | BudgetExceededError |" in text
    assert "## Analysis errors" in text
    assert "## Cost" not in text


def test_json_report_reloads():
    doc = _document()
    assert load_report_document(render_report(doc, ReportFormat.JSON)) == doc
    assert render_report(doc, "markdown") == render_markdown(doc)


def test_document_checks_tally_and_checklist():
    doc = _document()
    with pytest.raises(ValidationError):
        ReportDocument(assessments=doc.assessments, label_tally={"CONTEXTUAL_RISK": Share(count=1, percentage=100)})
    with pytest.raises(ValidationError):
        ReportDocument(checklist=doc.checklist[:4])
