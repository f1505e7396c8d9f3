import json
import logging
import os
from typing import Any, Callable, Dict, List, Optional

from crewai import LLM, Agent, Crew, Process, Task
from crewai.agents.agent_builder.base_agent import BaseAgent
from crewai.project import CrewBase, agent, crew, task

from security_triage_team.errors import AssessmentParseError, ConfigError, ProtocolViolation, TransportError
from security_triage_team.models import Assessment, Finding, parse_assessment
from security_triage_team.reasoning.agent import (
    AgentAction,
    BackendKind,
    BackendSession,
    Budget,
    ReasoningBackend,
)
from security_triage_team.reasoning.backends import API_KEY_ENV, finding_inputs, strip_code_fences
from security_triage_team.repo_context import RepoHandle
from security_triage_team.tools.repo_tools import RepoTool

logger = logging.getLogger(__name__)


@CrewBase
class SecurityTriageTeam:
    """SecurityTriageTeam crew: one analyst agent assessing one finding."""

    agents: List[BaseAgent]
    tasks: List[Task]

    def __init__(
        self,
        tools: Dict[str, RepoTool],
        llm: Any,
        budget: Budget,
        step_callback: Optional[Callable[[Any], None]] = None,
    ):
        self.repo_tools = tools
        self.llm = llm
        self.budget = budget
        self.step_callback = step_callback

    @agent
    def security_analyst(self) -> Agent:
        return Agent(
            config=self.agents_config["security_analyst"],  # type: ignore[index]
            tools=list(self.repo_tools.values()),
            llm=self.llm,
            max_iter=self.budget.max_steps,
            max_execution_time=int(self.budget.timeout_seconds),
            step_callback=self.step_callback,
            verbose=False,
        )

    @task
    def assess_finding_task(self) -> Task:
        return Task(
            config=self.tasks_config["assess_finding_task"],  # type: ignore[index]
            output_pydantic=Assessment,
        )

    @crew
    def crew(self) -> Crew:
        """Creates the SecurityTriageTeam crew"""
        return Crew(
            agents=self.agents,  # Automatically created by the @agent decorator
            tasks=self.tasks,  # Automatically created by the @task decorator
            process=Process.sequential,
            verbose=False,
        )


def trace_action_from_crew_step(step: Any) -> Optional[AgentAction]:
    """
    Convert a crewAI step (tool use or finish) into a tool-call action.

    Finish steps return None; their answer arrives through the crew output.
    """
    tool_name = getattr(step, "tool", None)
    if not tool_name:
        return None
    raw = getattr(step, "tool_input", None) or {}
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError:
            raw = {}
    arguments = raw if isinstance(raw, dict) else {}
    return AgentAction.call(tool_name.strip(), rationale=(getattr(step, "thought", "") or "").strip(), **arguments)


def assessment_from_crew_output(output: Any) -> Assessment:
    """Take the structured output when crewAI produced one, else parse the raw text."""
    structured = getattr(output, "pydantic", None)
    if isinstance(structured, Assessment):
        return structured
    content = output.raw if hasattr(output, "raw") else str(output)
    return parse_assessment(strip_code_fences(content))


class CrewSession(BackendSession):
    """
    Runs the crew once, then hands its recorded tool calls and final answer to
    the loop one action at a time.
    """

    def __init__(self, backend: "CrewBackend", finding: Finding, repo: RepoHandle,
                 tools: Dict[str, RepoTool], budget: Budget):
        self._backend = backend
        self._finding = finding
        self._repo = repo
        self._tools = tools
        self._budget = budget
        self._pending: List[Any] = []
        self._ran = False

    def _kickoff(self) -> None:
        recorded: List[AgentAction] = []

        def record(step: Any) -> None:
            action = trace_action_from_crew_step(step)
            if action is not None:
                recorded.append(action)

        team = self._backend.team_factory(self._tools, self._backend.llm(), self._budget, record)
        try:
            output = team.crew().kickoff(inputs=finding_inputs(self._finding, self._repo))
        except Exception as e:
            raise TransportError(f"An error occurred while running the crew: {e}") from e

        usage = getattr(output, "token_usage", None)
        if usage is not None:
            self.input_tokens += getattr(usage, "prompt_tokens", 0) or 0
            self.output_tokens += getattr(usage, "completion_tokens", 0) or 0
        try:
            answer: Any = AgentAction.final(assessment_from_crew_output(output))
        except AssessmentParseError as e:
            answer = ProtocolViolation(f"Crew output is not a valid assessment ({e.key}): {e}")
        self._pending = [*recorded, answer]
        self._ran = True

    def step(self, observation: Optional[str]) -> AgentAction:
        if not self._ran:
            self._kickoff()
        item = self._pending.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def correct(self, problem: str) -> None:
        # The crew cannot be resumed mid-run; a rejected output means a fresh run.
        logger.info("Crew output rejected (%s); running the crew again", problem)
        self._ran = False
        self._pending = []


class CrewBackend(ReasoningBackend):
    """Remote model driven by crewAI's own agent executor."""

    kind = BackendKind.CREW

    def __init__(self, endpoint_url: Optional[str], model_name: str, team_factory: Optional[Callable[..., Any]] = None,
                 llm_factory: Optional[Callable[[], Any]] = None, seed: Optional[int] = None):
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.seed = seed
        self.team_factory = team_factory or SecurityTriageTeam
        self._llm_factory = llm_factory
        if llm_factory is None and not os.environ.get(API_KEY_ENV):
            raise ConfigError(f"The crew backend needs the {API_KEY_ENV} environment variable.")

    def llm(self) -> Any:
        if self._llm_factory is not None:
            return self._llm_factory()
        return LLM(model=self.model_name, base_url=self.endpoint_url, api_key=os.environ[API_KEY_ENV], temperature=0,
                   seed=self.seed)

    def start(self, finding: Finding, repo: RepoHandle, tools: Dict[str, RepoTool], budget: Budget) -> BackendSession:
        return CrewSession(self, finding, repo, tools, budget)
