"""
settings.py - Run configuration and access to the packaged YAML config.

The agent persona and task prompt are the same files crewAI reads through
`@CrewBase`; the chat-completions backend and the default budget read them
here with PyYAML.
"""

import logging
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from security_triage_team.errors import ConfigError
from security_triage_team.evaluation import PriceConfig
from security_triage_team.reasoning.agent import BackendKind, Budget

logger = logging.getLogger(__name__)

CONFIG_PACKAGE = "security_triage_team"
REMOTE_BACKENDS = (BackendKind.REMOTE_MODEL, BackendKind.CREW)


@lru_cache(maxsize=None)
def _config_text(name: str) -> str:
    return resources.files(CONFIG_PACKAGE).joinpath("config", name).read_text(encoding="utf-8")


def _load_yaml(name: str) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(_config_text(name))
    except yaml.YAMLError as e:
        raise ConfigError(f"config/{name} is not valid YAML: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config/{name} must hold a mapping")
    return data


def load_agent_config() -> Dict[str, Any]:
    return _load_yaml("agents.yaml")


def load_task_config() -> Dict[str, Any]:
    return _load_yaml("tasks.yaml")


def default_budget() -> Budget:
    """Step and time limits taken from the security_analyst entry of agents.yaml."""
    analyst = load_agent_config()["security_analyst"]
    return Budget(
        max_steps=int(analyst.get("max_iter", 20)),
        timeout_seconds=float(analyst.get("max_execution_time", 300)),
    )


class RunConfig(BaseModel):
    """
    Everything one pipeline run needs. The remote credential is never part of
    it; remote backends read OPENAI_API_KEY from the environment.
    """

    model_config = ConfigDict(frozen=True)

    repo_path: Path
    artifact_id: Optional[str] = None
    semgrep_report_paths: Tuple[Path, ...] = ()
    trivy_report_paths: Tuple[Path, ...] = ()
    builtin_rules_path: Optional[Path] = None
    builtin_scan: bool = True
    backend: BackendKind = BackendKind.HEURISTIC
    endpoint_url: Optional[str] = None
    model_name: Optional[str] = None
    budget: Budget = Field(default_factory=default_budget)
    prices: PriceConfig = Field(default_factory=PriceConfig)
    seed: int = 0
    worker_count: int = Field(4, ge=1)
    output_dir: Path = Path("output")

    @model_validator(mode="after")
    def _check_backend(self) -> "RunConfig":
        if self.backend == BackendKind.SCRIPTED:
            raise ValueError("the scripted backend is only available through transcript replay")
        if self.backend in REMOTE_BACKENDS:
            missing = [name for name in ("endpoint_url", "model_name") if not getattr(self, name)]
            if missing:
                raise ValueError(f"backend {self.backend.value} needs {' and '.join(missing)}")
        return self

    @property
    def resolved_artifact_id(self) -> str:
        return self.artifact_id or self.repo_path.resolve().name

    @property
    def report_paths(self) -> Tuple[Path, ...]:
        return self.semgrep_report_paths + self.trivy_report_paths


def make_run_config(**values: Any) -> RunConfig:
    """Build a RunConfig, reporting invalid combinations as ConfigError."""
    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
            for error in e.errors(include_url=False)
        )
        raise ConfigError(f"Invalid run configuration: {problems}") from e


def parse_price(text: str) -> Decimal:
    try:
        price = Decimal(text)
    except ArithmeticError:
        raise ConfigError(f"Price {text!r} is not a number")
    if not price.is_finite():
        raise ConfigError(f"Price {text!r} is not a number")
    if price < 0:
        raise ConfigError(f"Price {text!r} is negative")
    return price
