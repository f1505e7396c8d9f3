import os
import shutil
from pathlib import Path
from typing import Callable, Dict

import pytest

os.environ.setdefault("OTEL_SDK_DISABLED", "true")
os.environ.setdefault("CREWAI_DISABLE_TELEMETRY", "true")

from security_triage_team.models import (  # noqa: E402
    Assessment,
    Category,
    Finding,
    SecurityLabel,
    Severity,
    ToolName,
)
from security_triage_team.repo_context import RepoHandle  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_REPOS = FIXTURES / "repos"
FIXTURE_REPORTS = FIXTURES / "reports"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def copy_repo(tmp_path: Path) -> Callable[[str], Path]:
    """Copy a bundled fixture repository into the test's temporary directory."""

    def _copy(name: str, target: str = "") -> Path:
        destination = tmp_path / (target or name)
        shutil.copytree(FIXTURE_REPOS / name, destination)
        return destination

    return _copy


@pytest.fixture
def make_repo(tmp_path: Path) -> Callable[[Dict[str, str]], Path]:
    """Write a small repository from a {relative path: text} mapping."""
    counter = {"n": 0}

    def _make(files: Dict[str, str]) -> Path:
        counter["n"] += 1
        root = tmp_path / f"repo{counter['n']}"
        root.mkdir()
        for relative, text in files.items():
            path = root / relative
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return root

    return _make


@pytest.fixture
def bootsign_repo() -> RepoHandle:
    return RepoHandle.open(FIXTURE_REPOS / "bootsign_keys")


@pytest.fixture
def host_probe_repo() -> RepoHandle:
    return RepoHandle.open(FIXTURE_REPOS / "host_probe")


@pytest.fixture
def unused_dependency_repo() -> RepoHandle:
    return RepoHandle.open(FIXTURE_REPOS / "unused_dependency")


def make_finding(**overrides) -> Finding:
    values = dict(
        artifact_id="artifact",
        tool=ToolName.SEMGREP,
        finding_id="rule.example",
        category=Category.CODE_ISSUE,
        severity=Severity.MEDIUM,
        file="main.py",
        line=1,
        message="example",
    )
    values.update(overrides)
    return Finding(**values)


def make_assessment(label: SecurityLabel = SecurityLabel.HARDENING_RECOMMENDATION, **overrides) -> Assessment:
    values = dict(
        security_label=label,
        code_purpose="Helper that runs the experiment.",
        execution_context="Local script run by the researcher.",
        required_conditions_for_exploit="An attacker must control the input file.",
        input_controlled_by_attacker="no - the input is a fixed path",
        reachable_in_artifact_execution="yes - called from main.py",
        evidence_snippet="main.py:3: run(path)",
        reasoning="The call runs, but only on bundled data.",
        recommendation="Validate the input path.",
    )
    values.update(overrides)
    return Assessment(**values)
