import json
import random

import pytest
from pydantic import ValidationError

from conftest import FIXTURES, make_assessment, make_finding
from security_triage_team.errors import AssessmentParseError
from security_triage_team.models import (
    ASSESSMENT_KEYS,
    Category,
    FindingRef,
    FlagKey,
    LabelCategory,
    SecurityLabel,
    ToolName,
    TriState,
    TriValue,
    findings_from_jsonl,
    findings_to_jsonl,
    label_category,
    parse_assessment,
    serialize_assessment,
    validate_assessment,
)

ALPHABET = "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;:'\"/\\{}[]-_éüßλ中文🙂\n\t"


def _random_text(rng: random.Random) -> str:
    text = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(1, 40)))
    return text if text.strip() else "x" + text


def _random_tri(rng: random.Random) -> str:
    value = rng.choice(["yes", "no", "uncertain"])
    return f"{value} - {_random_text(rng)}"


def test_finding_rejects_malformed_identifiers():
    with pytest.raises(ValidationError):
        make_finding(cwe_ids=("CWE78",))
    with pytest.raises(ValidationError):
        make_finding(cve_ids=("CVE-23-1",))
    with pytest.raises(ValidationError):
        make_finding(cvss=10.5)
    with pytest.raises(ValidationError):
        make_finding(line=0)


def test_dependency_finding_needs_package():
    with pytest.raises(ValidationError):
        make_finding(tool=ToolName.TRIVY, category=Category.DEPENDENCY_VULN, finding_id="CVE-2023-32681")
    finding = make_finding(tool=ToolName.TRIVY, category=Category.DEPENDENCY_VULN,
                           finding_id="CVE-2023-32681", package="requests", line=None)
    assert finding.package == "requests"


def test_finding_ref_key_round_trip():
    finding = make_finding(file="src/app.py", line=12)
    ref = FindingRef.of(finding)
    assert ref.key == "artifact|semgrep|rule.example|src/app.py|12"
    assert FindingRef.from_key(ref.key) == ref
    assert ref.flag() == FlagKey(ToolName.SEMGREP, "rule.example")

    no_line = FindingRef.of(make_finding(line=None))
    assert no_line.key.endswith("|")
    assert FindingRef.from_key(no_line.key).line is None


def test_finding_ref_key_keeps_pipes_in_file_paths():
    ref = FindingRef.of(make_finding(file="data/a|b.py", line=7))
    assert ref.key == "artifact|semgrep|rule.example|data/a|b.py|7"
    assert FindingRef.from_key(ref.key) == ref
    with pytest.raises(ValueError):
        FindingRef.from_key("artifact|semgrep|rule.example")


def test_flag_key_string_form():
    flag = FlagKey(ToolName.TRIVY, "CVE-2023-32681")
    assert str(flag) == "trivy:CVE-2023-32681"
    assert FlagKey.from_string(str(flag)) == flag


def test_label_category_collapse():
    assert label_category(SecurityLabel.FALSE_POSITIVE) == LabelCategory.NON_SECURITY
    for label in (SecurityLabel.CONTEXTUAL_RISK, SecurityLabel.HARDENING_RECOMMENDATION,
                  SecurityLabel.BENIGN_RESEARCH_USAGE):
        assert label_category(label) == LabelCategory.SECURITY_RELEVANT


@pytest.mark.parametrize("text, value, note", [
    ("yes - argv reaches the call", TriValue.YES, "argv reaches the call"),
    ("no", TriValue.NO, ""),
    ("uncertain - no entry point found", TriValue.UNCERTAIN, "no entry point found"),
])
def test_tri_state_parse(text, value, note):
    parsed = TriState.parse(text)
    assert parsed.value == value
    assert parsed.note == note


def test_tri_state_requires_note_unless_no():
    with pytest.raises(ValidationError):
        TriState(value=TriValue.YES)
    with pytest.raises(ValueError):
        TriState.parse("maybe - who knows")
    assert TriState.no().render() == "no"


@pytest.mark.parametrize("text", ["yes", "uncertain", "yes -", "uncertain -   "])
def test_tri_state_text_needs_a_note_after_yes_or_uncertain(text):
    with pytest.raises(ValueError):
        TriState.parse(text)
    assessment = make_assessment(input_controlled_by_attacker=text)
    assert validate_assessment(assessment).errors == ("input_controlled_by_attacker",)


def test_validate_assessment_names_each_bad_field():
    assessment = make_assessment(code_purpose="  ", input_controlled_by_attacker="perhaps - not sure")
    result = validate_assessment(assessment)
    assert not result.ok
    assert result.errors == ("code_purpose", "input_controlled_by_attacker")


def test_serialize_uses_canonical_key_order_and_utf8():
    assessment = make_assessment(reasoning="Schlüssel für Tests 🙂")
    text = serialize_assessment(assessment)
    assert list(json.loads(text)) == list(ASSESSMENT_KEYS)
    assert "Schlüssel für Tests 🙂" in text
    with pytest.raises(ValueError):
        serialize_assessment(make_assessment(reasoning=""))


def test_parse_rejects_unknown_missing_and_bad_label():
    data = json.loads(serialize_assessment(make_assessment()))

    with pytest.raises(AssessmentParseError) as unknown:
        parse_assessment(json.dumps({**data, "severity": "high"}))
    assert unknown.value.key == "severity"

    missing = dict(data)
    del missing["recommendation"]
    with pytest.raises(AssessmentParseError) as absent:
        parse_assessment(json.dumps(missing))
    assert absent.value.key == "recommendation"

    with pytest.raises(AssessmentParseError) as bad_label:
        parse_assessment(json.dumps({**data, "security_label": "SAFE"}))
    assert bad_label.value.key == "security_label"

    with pytest.raises(AssessmentParseError):
        parse_assessment("not json")


def test_randomized_assessments_serialize_byte_stably():
    rng = random.Random(20240611)
    for _ in range(500):
        assessment = make_assessment(
            rng.choice(list(SecurityLabel)),
            code_purpose=_random_text(rng),
            execution_context=_random_text(rng),
            required_conditions_for_exploit=_random_text(rng),
            input_controlled_by_attacker=_random_tri(rng),
            reachable_in_artifact_execution=_random_tri(rng),
            evidence_snippet=_random_text(rng),
            reasoning=_random_text(rng),
            recommendation=_random_text(rng),
        )
        text = serialize_assessment(assessment)
        parsed = parse_assessment(text)
        assert parsed == assessment
        assert serialize_assessment(parsed).encode("utf-8") == text.encode("utf-8")


def test_unused_dependency_assessment_fixture_parses_and_validates():
    text = (FIXTURES / "assessments" / "unused_dependency.json").read_text(encoding="utf-8")
    assessment = parse_assessment(text)
    assert assessment.security_label == SecurityLabel.FALSE_POSITIVE
    assert validate_assessment(assessment).ok
    assert TriState.parse(assessment.reachable_in_artifact_execution).value == TriValue.NO


def test_findings_jsonl_round_trip():
    findings = [make_finding(line=n, file=f"f{n}.py") for n in range(1, 4)]
    assert findings_from_jsonl(findings_to_jsonl(findings)) == findings
