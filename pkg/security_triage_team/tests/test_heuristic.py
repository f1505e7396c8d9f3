import itertools
import random

import pytest

from conftest import make_finding
from security_triage_team.models import (
    Category,
    ContextDimensions,
    SecurityLabel,
    ToolName,
    TriState,
    TriValue,
    validate_assessment,
)
from security_triage_team.reasoning.evidence import EvidenceBundle, gather_dimensions
from security_triage_team.reasoning.heuristic import build_assessment, heuristic_decide
from security_triage_team.repo_context import DependencySpec, RepoHandle, SearchHit

CATEGORIES = (Category.CODE_ISSUE, Category.CONFIG_ISSUE, Category.DEPENDENCY_VULN)


def _tri(value: TriValue) -> TriState:
    return TriState(value=value, note="" if value == TriValue.NO else f"{value.value} because of the fixture")


def _finding(category: Category):
    if category == Category.DEPENDENCY_VULN:
        return make_finding(tool=ToolName.TRIVY, category=category, finding_id="CVE-2023-32681", line=None,
                            file="requirements.txt", package="requests", version="2.29.0",
                            cve_ids=("CVE-2023-32681",), message="leak (fixed in 2.31.0)")
    return make_finding(category=category, cwe_ids=("CWE-78",), file="tool/run.py", line=4)


def _bundle(category, attacker, reach, markers, usage_hits=1, resolved=True):
    hits = tuple(SearchHit(path="app.py", line=n + 1, text="import requests") for n in range(usage_hits))
    return EvidenceBundle(
        finding_ref_key="k",
        location_resolved=resolved,
        dependency_usage_hits=usage_hits,
        usage_hits=hits,
        manifest=DependencySpec(manifest="requirements.txt", package="requests", version_constraint="==2.29.0")
        if category == Category.DEPENDENCY_VULN else None,
        reachable_from_entrypoint=_tri(reach),
        research_demo_markers=("path segment 'tests'",) if markers else (),
        demo_path=markers,
        dimensions=ContextDimensions(
            attacker_controlled_input=_tri(attacker),
            reachability=_tri(reach),
            execution_context="Local script.",
            exploitation_condition="An attacker must control the command.",
        ),
        code_file=category == Category.CODE_ISSUE,
        flagged_text="os.system(cmd)",
    )


SWEEP = list(itertools.product(CATEGORIES, TriValue, TriValue, (False, True), (0, 2), (False, True)))


@pytest.mark.parametrize("category, attacker, reach, markers, usage_hits, resolved", SWEEP)
def test_decision_is_total_and_sound(category, attacker, reach, markers, usage_hits, resolved):
    finding = _finding(category)
    label = heuristic_decide(_bundle(category, attacker, reach, markers, usage_hits, resolved), finding)
    assert label in SecurityLabel

    if attacker == TriValue.NO and reach == TriValue.NO:
        assert label != SecurityLabel.CONTEXTUAL_RISK
    if label == SecurityLabel.CONTEXTUAL_RISK:
        assert TriValue.NO not in (attacker, reach)
        assert TriValue.YES in (attacker, reach)
    if category == Category.DEPENDENCY_VULN and resolved and usage_hits == 0:
        assert label == SecurityLabel.FALSE_POSITIVE
    if category != Category.DEPENDENCY_VULN and reach == TriValue.NO:
        assert label == SecurityLabel.FALSE_POSITIVE
    if label == SecurityLabel.BENIGN_RESEARCH_USAGE:
        assert markers and TriValue.YES not in (attacker, reach)


@pytest.mark.parametrize("attacker, reach, markers, expected", [
    (TriValue.YES, TriValue.YES, False, SecurityLabel.CONTEXTUAL_RISK),
    (TriValue.YES, TriValue.UNCERTAIN, False, SecurityLabel.CONTEXTUAL_RISK),
    (TriValue.UNCERTAIN, TriValue.YES, False, SecurityLabel.CONTEXTUAL_RISK),
    (TriValue.UNCERTAIN, TriValue.UNCERTAIN, False, SecurityLabel.HARDENING_RECOMMENDATION),
    (TriValue.NO, TriValue.YES, False, SecurityLabel.HARDENING_RECOMMENDATION),
    (TriValue.NO, TriValue.UNCERTAIN, True, SecurityLabel.BENIGN_RESEARCH_USAGE),
    (TriValue.YES, TriValue.YES, True, SecurityLabel.CONTEXTUAL_RISK),
    (TriValue.YES, TriValue.NO, True, SecurityLabel.FALSE_POSITIVE),
    (TriValue.UNCERTAIN, TriValue.YES, True, SecurityLabel.CONTEXTUAL_RISK),
    (TriValue.NO, TriValue.YES, True, SecurityLabel.HARDENING_RECOMMENDATION),
])
def test_code_issue_decision_table(attacker, reach, markers, expected):
    finding = _finding(Category.CODE_ISSUE)
    assert heuristic_decide(_bundle(Category.CODE_ISSUE, attacker, reach, markers), finding) == expected


def test_unresolved_dependency_is_not_a_false_positive():
    finding = _finding(Category.DEPENDENCY_VULN)
    bundle = _bundle(Category.DEPENDENCY_VULN, TriValue.UNCERTAIN, TriValue.UNCERTAIN, False,
                     usage_hits=0, resolved=False)
    assert heuristic_decide(bundle, finding) == SecurityLabel.HARDENING_RECOMMENDATION


def test_randomized_bundles_always_build_valid_assessments():
    rng = random.Random(99)
    for _ in range(300):
        category = rng.choice(CATEGORIES)
        bundle = _bundle(category, rng.choice(list(TriValue)), rng.choice(list(TriValue)), rng.random() < 0.5,
                         usage_hits=rng.choice([0, 1, 3]), resolved=rng.random() < 0.9)
        finding = _finding(category)
        label = heuristic_decide(bundle, finding)
        assessment = build_assessment(bundle, finding, label)
        assert assessment.security_label == label
        assert validate_assessment(assessment).ok


def test_false_positive_dependency_recommendation(unused_dependency_repo):
    finding = make_finding(artifact_id="unused_dependency", tool=ToolName.TRIVY, finding_id="CVE-2023-32681",
                           category=Category.DEPENDENCY_VULN, file="requirements.txt", line=None,
                           package="requests", version="2.29.0", cve_ids=("CVE-2023-32681",),
                           message="Unintended leak of Proxy-Authorization header (fixed in 2.31.0)")
    bundle = gather_dimensions(finding, unused_dependency_repo)
    label = heuristic_decide(bundle, finding)
    assessment = build_assessment(bundle, finding, label)
    assert label == SecurityLabel.FALSE_POSITIVE
    assert "Remove unused pin of requests from requirements.txt" in assessment.recommendation
    assert "2.31.0 or later" in assessment.recommendation
    assert assessment.evidence_snippet.startswith("requirements.txt pins requests==2.29.0")
    assert assessment.reachable_in_artifact_execution.startswith("no - ")


def test_contextual_risk_recommendation(host_probe_repo):
    finding = make_finding(artifact_id="host_probe", file="box.py", line=19, cwe_ids=("CWE-78",))
    bundle = gather_dimensions(finding, host_probe_repo)
    label = heuristic_decide(bundle, finding)
    assessment = build_assessment(bundle, finding, label)
    assert label == SecurityLabel.CONTEXTUAL_RISK
    assert "shell=False" in assessment.recommendation
    assert assessment.input_controlled_by_attacker.startswith("yes - ")
    assert "execute_command()" in assessment.evidence_snippet


def test_readme_marker_alone_does_not_hide_a_reachable_risk(make_repo):
    root = make_repo({
        "README.md": "# pipeline\n\nTo reproduce the results, run the tools in order.\n",
        "run.py": "from tools import shell\n\nif __name__ == '__main__':\n    shell.go(open('cmds.txt').read())\n",
        "tools/__init__.py": "",
        "tools/shell.py": "import os\n\n\ndef go(cmd):\n    os.system(cmd)\n",
    })
    finding = make_finding(file="tools/shell.py", line=5, cwe_ids=("CWE-78",))
    bundle = gather_dimensions(finding, RepoHandle.open(root))
    assert bundle.research_demo_markers
    assert heuristic_decide(bundle, finding) == SecurityLabel.CONTEXTUAL_RISK
