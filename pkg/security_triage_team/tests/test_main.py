import json
import logging

import pytest
from rich.logging import RichHandler

from conftest import FIXTURE_REPORTS
from security_triage_team.logging_setup import configure_logging
from security_triage_team.main import EXIT_ANALYSIS_ERRORS, EXIT_OK, EXIT_USAGE, main, main_replay
from security_triage_team.pipeline import (
    ASSESSMENTS_FILE,
    ERRORS_FILE,
    FINDINGS_FILE,
    REPORT_JSON_FILE,
    REPORT_MARKDOWN_FILE,
    TRACES_FILE,
    read_assessment_records,
)
from security_triage_team.report import load_report_document

SEMGREP_REPORT = str(FIXTURE_REPORTS / "host_probe.semgrep.json")
TRIVY_REPORT = str(FIXTURE_REPORTS / "unused_dependency.trivy.json")


@pytest.fixture
def host_probe(copy_repo):
    return str(copy_repo("host_probe"))


def _run(repo, out, *extra):
    return main(["run", "--repo", repo, "--out", str(out), "--semgrep-report", SEMGREP_REPORT, *extra])


def test_run_writes_every_file(host_probe, tmp_path, capsys):
    assert _run(host_probe, tmp_path / "out", "--workers", "2") == EXIT_OK
    for name in (FINDINGS_FILE, ASSESSMENTS_FILE, ERRORS_FILE, TRACES_FILE, REPORT_JSON_FILE, REPORT_MARKDOWN_FILE):
        assert (tmp_path / "out" / name).exists()
    assert "2 findings, 2 contextual risk, 0 false positives" in capsys.readouterr().out


def test_run_prints_json_report(host_probe, tmp_path, capsys):
    assert _run(host_probe, tmp_path / "out", "--format", "json") == EXIT_OK
    out = capsys.readouterr().out
    assert "Written" not in out
    assert json.loads(out)["artifact_id"] == "host_probe"
    doc = load_report_document(out)
    assert doc.artifact_id == "host_probe"
    assert len(doc.assessments) == 2


@pytest.mark.parametrize("argv, expected", [
    (["--help"], EXIT_OK),
    (["run", "--help"], EXIT_OK),
    ([], EXIT_USAGE),
    (["launch"], EXIT_USAGE),
    (["run", "--repo", ".", "--backend", "oracle"], EXIT_USAGE),
    (["run", "--repo", ".", "--max-steps", "many"], EXIT_USAGE),
])
def test_argument_errors(argv, expected):
    assert main(argv) == expected


def test_remote_backend_needs_endpoint_and_model(host_probe, tmp_path, capsys):
    assert _run(host_probe, tmp_path / "out", "--backend", "remote") == EXIT_USAGE
    assert "endpoint_url and model_name" in capsys.readouterr().out
    assert not (tmp_path / "out").exists()


def test_remote_backend_needs_the_environment_credential(host_probe, tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    code = _run(host_probe, tmp_path / "out", "--backend", "remote", "--endpoint", "https://models.invalid/v1",
                "--model", "test-model")
    assert code == EXIT_USAGE


def test_bad_inputs_are_usage_errors(host_probe, tmp_path):
    assert main(["run", "--repo", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert main(["run", "--repo", host_probe, "--out", str(tmp_path / "out"),
                 "--semgrep-report", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert _run(host_probe, tmp_path / "out", "--input-price", "free") == EXIT_USAGE
    assert _run(host_probe, tmp_path / "out", "--timeout", "0") == EXIT_USAGE


def test_zero_step_budget_still_writes_the_report(host_probe, tmp_path):
    out = tmp_path / "out"
    assert _run(host_probe, out, "--max-steps", "0") == EXIT_ANALYSIS_ERRORS
    doc = load_report_document((out / REPORT_JSON_FILE).read_text(encoding="utf-8"))
    assert doc.assessments == ()
    assert [error.error_type for error in doc.errors] == ["BudgetExceededError"] * 2
    assert doc.summary.total_findings == 2


def test_stages_match_a_single_run(host_probe, tmp_path):
    assert _run(host_probe, tmp_path / "whole") == EXIT_OK

    staged = tmp_path / "staged"
    common = ["--repo", host_probe, "--out", str(staged)]
    assert main(["scan", *common, "--semgrep-report", SEMGREP_REPORT]) == EXIT_OK
    assert main(["analyze", *common]) == EXIT_OK
    assert main(["report", *common, "--format", "json"]) == EXIT_OK

    for name in (FINDINGS_FILE, ASSESSMENTS_FILE, REPORT_JSON_FILE):
        assert (staged / name).read_bytes() == (tmp_path / "whole" / name).read_bytes()


def test_analyze_needs_findings(host_probe, tmp_path):
    assert main(["analyze", "--repo", host_probe, "--out", str(tmp_path / "empty")]) == EXIT_USAGE


def test_stats_and_sample(host_probe, copy_repo, tmp_path, capsys):
    out = tmp_path / "scan"
    assert main(["scan", "--repo", str(copy_repo("unused_dependency")), "--out", str(out),
                 "--trivy-report", TRIVY_REPORT]) == EXIT_OK
    findings = str(out / FINDINGS_FILE)
    capsys.readouterr()

    assert main(["stats", "--findings", findings, "--format", "json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["total_findings"] == 1
    assert summary["per_tool"] == {"trivy": 1}
    assert summary["top_cwes"][0]["cwe"] == "CWE-200"

    assert main(["stats", "--findings", findings]) == EXIT_OK
    assert capsys.readouterr().out.startswith("Findings: 1 across 1 artifact(s)")

    assert main(["sample", "--findings", findings, "--k", "5", "--min-artifacts", "1", "--per-flag", "5",
                 "--seed", "3", "--format", "json"]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert plan["selected_flags"] == ["trivy:CVE-2023-32681"]
    assert plan["seed"] == 3
    assert plan["rng_algorithm"] == "PCG64"


def test_evaluate_against_gold_labels(host_probe, tmp_path, capsys):
    out = tmp_path / "out"
    assert _run(host_probe, out) == EXIT_OK
    records = read_assessment_records(out / ASSESSMENTS_FILE)
    gold = tmp_path / "gold.jsonl"
    gold.write_text("".join(
        json.dumps({"finding_ref": record.finding_ref.key,
                    "gold_label": "CONTEXTUAL_RISK" if index == 0 else "HARDENING_RECOMMENDATION"}) + "\n"
        for index, record in enumerate(records)
    ), encoding="utf-8")
    capsys.readouterr()

    assert main(["evaluate", "--gold", str(gold), "--assessments", str(out / ASSESSMENTS_FILE)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "accuracy 100.00%, macro F1 100.00%" in text
    assert "accuracy 50.00%" in text

    assert main(["evaluate", "--gold", str(gold), "--assessments", str(out / ASSESSMENTS_FILE),
                 "--mode", "multiclass", "--traces", str(out / TRACES_FILE), "--artifacts", "1",
                 "--format", "json"]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["multiclass"]["accuracy"] == 0.5
    assert payload["cost"]["finding_count"] == 2
    assert "binary" not in payload


def test_evaluate_reports_unpaired_references(host_probe, tmp_path, capsys):
    out = tmp_path / "out"
    assert _run(host_probe, out) == EXIT_OK
    gold = tmp_path / "gold.jsonl"
    gold.write_text(json.dumps({"finding_ref": "other|semgrep|r|a.py|1", "gold_label": "FALSE_POSITIVE"}) + "\n",
                    encoding="utf-8")
    capsys.readouterr()
    assert main(["evaluate", "--gold", str(gold), "--assessments", str(out / ASSESSMENTS_FILE)]) == EXIT_USAGE
    assert "not paired" in capsys.readouterr().out


def test_replay_reproduces_assessments(host_probe, tmp_path):
    out = tmp_path / "out"
    assert _run(host_probe, out) == EXIT_OK
    code = main_replay([str(out / TRACES_FILE), "--repo", host_probe, "--out", str(out)])
    assert code == EXIT_OK
    replayed = (out / "replay" / ASSESSMENTS_FILE).read_bytes()
    assert replayed == (out / ASSESSMENTS_FILE).read_bytes()


def test_replay_needs_traces(host_probe, tmp_path):
    out = tmp_path / "out"
    assert _run(host_probe, out) == EXIT_OK
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    assert main_replay([str(empty), "--repo", host_probe, "--out", str(out)]) == EXIT_USAGE
    assert main_replay(["--help"]) == EXIT_OK


def test_logging_is_configured_once():
    first = configure_logging()
    configure_logging(verbose=True)
    assert first is logging.getLogger("security_triage_team")
    assert sum(isinstance(handler, RichHandler) for handler in first.handlers) == 1
    assert first.level == logging.DEBUG
    configure_logging()
