"""
backends.py - Interchangeable producers of agent actions.

* `HeuristicBackend` walks a fixed tool plan per finding category and answers
  with the deterministic decision rules. It needs no network and spends no tokens.
* `ChatCompletionBackend` talks to an OpenAI-compatible chat-completions
  endpoint, declaring the nine repository tools as functions.
* `ScriptedBackend` replays recorded actions, for transcript replay and tests.

The crewAI-driven backend lives in `security_triage_team.crew`.
"""

import json
import logging
import os
import time
from pathlib import PurePosixPath
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import openai

from security_triage_team.errors import (
    AssessmentParseError,
    ConfigError,
    NavigationError,
    BinaryContentError,
    ProtocolError,
    ProtocolViolation,
    TransportError,
)
from security_triage_team.models import Category, Finding, FindingRef, parse_assessment
from security_triage_team.reasoning.agent import (
    ActionKind,
    AgentAction,
    AgentTrace,
    BackendKind,
    BackendSession,
    Budget,
    ReasoningBackend,
)
from security_triage_team.reasoning.evidence import gather_dimensions
from security_triage_team.reasoning.heuristic import build_assessment, heuristic_decide
from security_triage_team.repo_context import RepoHandle, read_snippet
from security_triage_team.settings import load_agent_config, load_task_config
from security_triage_team.tools.repo_tools import RepoTool, tool_schemas

logger = logging.getLogger(__name__)

API_KEY_ENV = "OPENAI_API_KEY"
TRANSPORT_ATTEMPTS = 3


def strip_code_fences(content: str) -> str:
    """Remove a surrounding markdown code fence from model output."""
    content = content.strip()
    if content.startswith("```json"):
        content = content[7:]
    elif content.startswith("```"):
        content = content[3:]
    if content.endswith("```"):
        content = content[:-3]
    return content.strip()


def finding_inputs(finding: Finding, repo: RepoHandle) -> Dict[str, str]:
    """Values for the {placeholders} of the assessment task description."""
    snippet = "(no line reported)"
    if finding.line is not None:
        try:
            snippet = read_snippet(repo, finding.file, finding.line, 5).render()
        except (NavigationError, BinaryContentError) as e:
            snippet = f"(snippet unavailable: {e})"
    return {
        "artifact_id": finding.artifact_id,
        "tool": finding.tool.value,
        "finding_id": finding.finding_id,
        "category": finding.category.value,
        "severity": finding.severity.value,
        "file": finding.file,
        "line": "" if finding.line is None else str(finding.line),
        "message": finding.message or "(none)",
        "package": finding.package or "(none)",
        "version": finding.version or "(none)",
        "cwe_ids": ", ".join(finding.cwe_ids) or "(none)",
        "cve_ids": ", ".join(finding.cve_ids) or "(none)",
        "cvss": "" if finding.cvss is None else str(finding.cvss),
        "snippet": snippet,
    }


# --- Heuristic ---

def plan_tool_calls(finding: Finding, repo: RepoHandle) -> List[AgentAction]:
    """The evidence-gathering tool calls the heuristic makes before deciding."""
    if finding.category == Category.DEPENDENCY_VULN:
        return [
            AgentAction.call("extract_dependency_files", rationale="Find where the dependency is declared."),
            AgentAction.call("search_package_usage", rationale=f"Check whether {finding.package} is used at all.",
                             package=finding.package),
            AgentAction.call("detect_entrypoints", rationale="Find how the artifact is run."),
        ]
    if finding.file not in repo:
        return [AgentAction.call("get_repo_tree", rationale=f"{finding.file} is missing; look at the layout.")]
    plan: List[AgentAction] = []
    if finding.line is not None:
        plan += [
            AgentAction.call("read_snippet", rationale="Read the flagged code.",
                             path=finding.file, line=finding.line, context=5),
            AgentAction.call("extract_enclosing_function", rationale="Find the enclosing definition.",
                             path=finding.file, line=finding.line),
        ]
    plan += [
        AgentAction.call("detect_entrypoints", rationale="Check whether the flagged file runs."),
        AgentAction.call("search_repo", rationale="Find references to the flagged file.",
                         query=PurePosixPath(finding.file).name, max_hits=20),
    ]
    return plan


class HeuristicSession(BackendSession):
    def __init__(self, finding: Finding, repo: RepoHandle, budget: Budget):
        self._finding = finding
        self._repo = repo
        self._plan = plan_tool_calls(finding, repo)[:max(0, budget.max_steps - 1)]
        self._position = 0

    def step(self, observation: Optional[str]) -> AgentAction:
        if self._position < len(self._plan):
            action = self._plan[self._position]
            self._position += 1
            return action
        evidence = gather_dimensions(self._finding, self._repo)
        label = heuristic_decide(evidence, self._finding)
        return AgentAction.final(
            build_assessment(evidence, self._finding, label),
            rationale=f"Decision rules select {label.value}.",
        )


class HeuristicBackend(ReasoningBackend):
    kind = BackendKind.HEURISTIC

    def start(self, finding: Finding, repo: RepoHandle, tools: Dict[str, RepoTool], budget: Budget) -> BackendSession:
        return HeuristicSession(finding, repo, budget)


# --- Scripted replay ---

ScriptItem = Union[AgentAction, Exception]


class ScriptedSession(BackendSession):
    def __init__(self, script: Sequence[ScriptItem]):
        self._script = list(script)
        self._position = 0
        self.observations: List[Optional[str]] = []
        self.corrections: List[str] = []

    def step(self, observation: Optional[str]) -> AgentAction:
        self.observations.append(observation)
        if self._position >= len(self._script):
            raise ProtocolViolation("Transcript ended without a final answer")
        item = self._script[self._position]
        self._position += 1
        if isinstance(item, Exception):
            raise item
        return item

    def correct(self, problem: str) -> None:
        self.corrections.append(problem)


class ScriptedBackend(ReasoningBackend):
    """Replays fixed action sequences, one shared script or one per finding reference."""

    kind = BackendKind.SCRIPTED

    def __init__(self, script: Union[Sequence[ScriptItem], Mapping[str, Sequence[ScriptItem]]]):
        self._script = script
        self.sessions: List[ScriptedSession] = []

    @classmethod
    def from_traces(cls, traces: Iterable[AgentTrace]) -> "ScriptedBackend":
        return cls({trace.finding_ref.key: [step.action for step in trace.steps] for trace in traces})

    def start(self, finding: Finding, repo: RepoHandle, tools: Dict[str, RepoTool], budget: Budget) -> BackendSession:
        if isinstance(self._script, Mapping):
            key = FindingRef.of(finding).key
            if key not in self._script:
                raise ProtocolError(f"No transcript recorded for {key}")
            session = ScriptedSession(self._script[key])
        else:
            session = ScriptedSession(self._script)
        self.sessions.append(session)
        return session


# --- Remote chat completions ---

def system_prompt() -> str:
    analyst = load_agent_config()["security_analyst"]
    return "\n\n".join([
        f"You are a {analyst['role'].strip()}",
        analyst["goal"].strip(),
        analyst["backstory"].strip(),
        "Use the provided tools to gather evidence. When you are done, reply with only the JSON object "
        "described in the task, with no markdown code fences.",
    ])


def task_prompt(finding: Finding, repo: RepoHandle) -> str:
    task = load_task_config()["assess_finding_task"]
    inputs = finding_inputs(finding, repo)
    return f"{task['description'].format(**inputs).strip()}\n\nExpected output:\n{task['expected_output'].strip()}"


class ChatSession(BackendSession):
    def __init__(self, backend: "ChatCompletionBackend", messages: List[Dict[str, Any]],
                 declarations: List[Dict[str, Any]]):
        self._backend = backend
        self.messages = messages
        self._declarations = declarations
        self._pending_call: Optional[str] = None

    def _answer_pending(self, content: str) -> None:
        self.messages.append({"role": "tool", "tool_call_id": self._pending_call, "content": content})
        self._pending_call = None

    def step(self, observation: Optional[str]) -> AgentAction:
        if self._pending_call is not None:
            self._answer_pending(observation or "")
        response = self._backend.complete(self.messages, self._declarations)
        usage = getattr(response, "usage", None)
        if usage is not None:
            self.input_tokens += usage.prompt_tokens or 0
            self.output_tokens += usage.completion_tokens or 0
        message = response.choices[0].message

        if message.tool_calls:
            call = message.tool_calls[0]
            self.messages.append({
                "role": "assistant",
                "content": message.content,
                "tool_calls": [{
                    "id": call.id,
                    "type": "function",
                    "function": {"name": call.function.name, "arguments": call.function.arguments},
                }],
            })
            self._pending_call = call.id
            try:
                arguments = json.loads(call.function.arguments or "{}")
            except json.JSONDecodeError as e:
                raise ProtocolViolation(f"Arguments of {call.function.name} are not valid JSON: {e}")
            if not isinstance(arguments, dict):
                raise ProtocolViolation(f"Arguments of {call.function.name} must be a JSON object")
            return AgentAction(kind=ActionKind.TOOL_CALL, tool_name=call.function.name, arguments=arguments,
                               rationale=message.content or "")

        content = message.content or ""
        self.messages.append({"role": "assistant", "content": content})
        try:
            answer = parse_assessment(strip_code_fences(content))
        except AssessmentParseError as e:
            raise ProtocolViolation(f"Final answer is not a valid assessment ({e.key}): {e}")
        return AgentAction.final(answer)

    def correct(self, problem: str) -> None:
        if self._pending_call is not None:
            self._answer_pending(f"ERROR: {problem}")
            return
        self.messages.append({
            "role": "user",
            "content": f"Your last reply was rejected: {problem}. Call one of the declared tools, or reply with "
                       f"only the JSON assessment object with all nine keys.",
        })


class ChatCompletionBackend(ReasoningBackend):
    """
    Remote model reached through the OpenAI chat-completions protocol.

    The credential comes from the OPENAI_API_KEY environment variable only.
    Transport failures are retried with exponential backoff, three attempts in all.
    """

    kind = BackendKind.REMOTE_MODEL

    def __init__(
        self,
        endpoint_url: Optional[str],
        model_name: str,
        client: Any = None,
        backoff_seconds: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        seed: Optional[int] = None,
    ):
        self.model_name = model_name
        self.seed = seed
        self._backoff_seconds = backoff_seconds
        self._sleep = sleep
        if client is None:
            api_key = os.environ.get(API_KEY_ENV)
            if not api_key:
                raise ConfigError(f"The remote backend needs the {API_KEY_ENV} environment variable.")
            client = openai.OpenAI(base_url=endpoint_url, api_key=api_key, max_retries=0)
        self._client = client

    def complete(self, messages: List[Dict[str, Any]], declarations: List[Dict[str, Any]]) -> Any:
        request: Dict[str, Any] = {"model": self.model_name, "messages": messages, "tools": declarations, "temperature": 0}
        if self.seed is not None:
            request["seed"] = self.seed
        for attempt in range(1, TRANSPORT_ATTEMPTS + 1):
            try:
                return self._client.chat.completions.create(**request)
            except (openai.APIConnectionError, openai.RateLimitError, openai.InternalServerError) as e:
                if attempt == TRANSPORT_ATTEMPTS:
                    raise TransportError(f"Completion service unreachable after {attempt} attempts: {e}") from e
                delay = self._backoff_seconds * 2 ** (attempt - 1)
                logger.warning("Completion request failed (%s), retrying in %.1fs", e, delay)
                self._sleep(delay)

    def start(self, finding: Finding, repo: RepoHandle, tools: Dict[str, RepoTool], budget: Budget) -> BackendSession:
        messages = [
            {"role": "system", "content": system_prompt()},
            {"role": "user", "content": task_prompt(finding, repo)},
        ]
        return ChatSession(self, messages, tool_schemas(tools))
