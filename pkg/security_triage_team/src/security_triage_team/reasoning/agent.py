"""
agent.py - The bounded reason-act loop that turns one finding into an assessment.

A backend proposes actions one at a time: either a call to one of the nine
repository tools, or a final answer carrying an assessment. The loop runs the
tools, feeds the (truncated) observation back, and records every step in an
`AgentTrace`. A malformed action gets one corrective reprompt; a second one in
a row ends the analysis with a `ProtocolError`.
"""

import logging
import time
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from security_triage_team.errors import BudgetExceededError, ProtocolError, ProtocolViolation
from security_triage_team.models import Assessment, Finding, FindingRef, validate_assessment
from security_triage_team.repo_context import RepoHandle
from security_triage_team.tools.repo_tools import RepoTool, build_repo_tools

logger = logging.getLogger(__name__)

TRUNCATION_MARKER = "\n... [observation truncated]"


class ActionKind(str, Enum):
    TOOL_CALL = "tool_call"
    FINAL_ANSWER = "final_answer"


class BackendKind(str, Enum):
    HEURISTIC = "heuristic"
    REMOTE_MODEL = "remote_model"
    CREW = "crew"
    SCRIPTED = "scripted"


class AgentAction(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ActionKind
    tool_name: Optional[str] = None
    arguments: Dict[str, Any] = Field(default_factory=dict)
    answer: Optional[Assessment] = None
    rationale: str = ""

    @classmethod
    def call(cls, tool_name: str, rationale: str = "", **arguments: Any) -> "AgentAction":
        return cls(kind=ActionKind.TOOL_CALL, tool_name=tool_name, arguments=arguments, rationale=rationale)

    @classmethod
    def final(cls, answer: Assessment, rationale: str = "") -> "AgentAction":
        return cls(kind=ActionKind.FINAL_ANSWER, answer=answer, rationale=rationale)


class TraceStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    action: AgentAction
    observation: str = ""


class AgentTrace(BaseModel):
    """Ordered record of one analysis: steps, tokens and wall time."""

    model_config = ConfigDict(frozen=True)

    finding_ref: FindingRef
    steps: Tuple[TraceStep, ...] = ()
    input_tokens: int = Field(0, ge=0)
    output_tokens: int = Field(0, ge=0)
    wall_seconds: float = Field(0.0, ge=0.0)
    backend: BackendKind
    reprompts: int = Field(0, ge=0)

    @property
    def final_answer(self) -> Optional[Assessment]:
        if self.steps and self.steps[-1].action.kind == ActionKind.FINAL_ANSWER:
            return self.steps[-1].action.answer
        return None


class Budget(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_steps: int = Field(20, ge=0)
    max_observation_chars: int = Field(8000, gt=0)
    timeout_seconds: float = Field(300.0, gt=0)


class BackendSession:
    """Conversation state of one analysis; subclasses implement `step`."""

    input_tokens: int = 0
    output_tokens: int = 0

    def step(self, observation: Optional[str]) -> AgentAction:
        """Return the next action given the observation of the previous tool call."""
        raise NotImplementedError

    def correct(self, problem: str) -> None:
        """Tell the backend its last action was rejected."""


class ReasoningBackend:
    kind: BackendKind

    def start(self, finding: Finding, repo: RepoHandle, tools: Dict[str, RepoTool], budget: Budget) -> BackendSession:
        raise NotImplementedError


def truncate_observation(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + TRUNCATION_MARKER


def protocol_problem(action: AgentAction, tools: Dict[str, RepoTool]) -> Optional[str]:
    """Describe why an action breaks the protocol, or None when it is well formed."""
    if action.kind == ActionKind.TOOL_CALL:
        if action.tool_name not in tools:
            return f"Unknown tool {action.tool_name!r}; available tools: {', '.join(tools)}"
        return None
    if action.answer is None:
        return "Final answer carries no assessment"
    result = validate_assessment(action.answer)
    if not result.ok:
        return f"Final answer has invalid fields: {', '.join(result.errors)}"
    return None


def run_tool(tool: RepoTool, arguments: Dict[str, Any]) -> str:
    try:
        validated = tool.args_schema.model_validate(arguments)
    except ValidationError as e:
        return f"ERROR: invalid arguments for {tool.name}: {e.errors(include_url=False)}"
    return str(tool.run(**validated.model_dump()))


def analyze_finding(
    finding: Finding,
    repo: RepoHandle,
    backend: ReasoningBackend,
    budget: Budget = Budget(),
    tools: Optional[Dict[str, RepoTool]] = None,
) -> Tuple[Assessment, AgentTrace]:
    """
    Run the reason-act loop for one finding until a final answer.

    Raises:
        BudgetExceededError: When the step or time budget runs out first; the
            partial trace rides on the exception.
        ProtocolError: When the backend breaks the protocol twice in a row.
    """
    tools = tools if tools is not None else build_repo_tools(repo)
    ref = FindingRef.of(finding)
    started = time.monotonic()
    steps: List[TraceStep] = []
    reprompts = 0

    def trace(session: Optional[BackendSession]) -> AgentTrace:
        return AgentTrace(
            finding_ref=ref,
            steps=tuple(steps),
            input_tokens=session.input_tokens if session else 0,
            output_tokens=session.output_tokens if session else 0,
            wall_seconds=round(time.monotonic() - started, 6),
            backend=backend.kind,
            reprompts=reprompts,
        )

    if budget.max_steps == 0:
        raise BudgetExceededError(f"No step budget to analyze {ref.key}", trace=trace(None))

    session = backend.start(finding, repo, tools, budget)
    observation: Optional[str] = None
    corrected = False
    while True:
        if len(steps) >= budget.max_steps:
            raise BudgetExceededError(
                f"{ref.key}: no final answer within {budget.max_steps} steps", trace=trace(session)
            )
        if time.monotonic() - started > budget.timeout_seconds:
            raise BudgetExceededError(
                f"{ref.key}: no final answer within {budget.timeout_seconds} seconds", trace=trace(session)
            )
        try:
            action = session.step(observation)
            problem = protocol_problem(action, tools)
        except ProtocolViolation as e:
            problem = str(e)
        if problem is not None:
            if corrected:
                raise ProtocolError(f"{ref.key}: {problem}")
            logger.warning("Reprompting backend for %s: %s", ref.key, problem)
            corrected = True
            reprompts += 1
            session.correct(problem)
            observation = None
            continue
        corrected = False

        if action.kind == ActionKind.FINAL_ANSWER:
            steps.append(TraceStep(action=action))
            break
        observation = truncate_observation(
            run_tool(tools[action.tool_name], action.arguments), budget.max_observation_chars
        )
        steps.append(TraceStep(action=action, observation=observation))
        logger.debug("%s step %d: %s", ref.key, len(steps), action.tool_name)

    result = trace(session)
    return action.answer, result
