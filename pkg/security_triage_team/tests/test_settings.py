from decimal import Decimal
from pathlib import Path

import pytest

from security_triage_team.errors import ConfigError
from security_triage_team.reasoning.agent import BackendKind
from security_triage_team.settings import (
    default_budget,
    load_agent_config,
    load_task_config,
    make_run_config,
    parse_price,
)


def test_packaged_config_is_readable():
    assert "security_analyst" in load_agent_config()
    task = load_task_config()["assess_finding_task"]
    assert task["agent"] == "security_analyst"
    assert "{snippet}" in task["description"]


def test_default_budget_comes_from_agents_yaml():
    budget = default_budget()
    assert budget.max_steps == 20
    assert budget.timeout_seconds == 300
    assert budget.max_observation_chars == 8000


def test_run_config_defaults(tmp_path):
    config = make_run_config(repo_path=tmp_path / "my-artifact")
    assert config.backend == BackendKind.HEURISTIC
    assert config.worker_count == 4
    assert config.resolved_artifact_id == "my-artifact"
    assert config.output_dir == Path("output")
    assert config.prices.input_price == Decimal("2.50")
    assert config.report_paths == ()


def test_report_paths_keep_scanner_order(tmp_path):
    config = make_run_config(repo_path=tmp_path, artifact_id="x",
                             semgrep_report_paths=[tmp_path / "s.json"], trivy_report_paths=[tmp_path / "t.json"])
    assert config.report_paths == (tmp_path / "s.json", tmp_path / "t.json")
    assert config.resolved_artifact_id == "x"


@pytest.mark.parametrize("values, message", [
    ({"backend": "remote_model"}, "endpoint_url and model_name"),
    ({"backend": "crew", "endpoint_url": "https://models.invalid/v1"}, "model_name"),
    ({"backend": "scripted"}, "transcript replay"),
    ({"worker_count": 0}, "worker_count"),
    ({"backend": "oracle"}, "backend"),
])
def test_invalid_run_configs(tmp_path, values, message):
    with pytest.raises(ConfigError, match=message):
        make_run_config(repo_path=tmp_path, **values)


def test_remote_config_never_holds_a_credential(tmp_path):
    config = make_run_config(repo_path=tmp_path, backend="remote_model", endpoint_url="https://models.invalid/v1",
                             model_name="test-model")
    assert "key" not in " ".join(config.model_dump())


@pytest.mark.parametrize("text, expected", [("2.50", Decimal("2.50")), ("0", Decimal("0")), ("10", Decimal("10"))])
def test_parse_price(text, expected):
    assert parse_price(text) == expected


@pytest.mark.parametrize("text", ["free", "-1", "NaN", "Infinity"])
def test_parse_price_rejects(text):
    with pytest.raises(ConfigError):
        parse_price(text)
