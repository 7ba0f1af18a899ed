"""Prompt contracts and structured outputs for the five agent roles.

Router classifies and dispatches, Planner decomposes, Coordinator
executes tools and synthesizes, Researcher gathers evidence through the
generic helper interface, and the optional Evaluator gates turn
completion with severity-scored critiques. All model outputs are
schema-validated JSON obtained via validated retry.
"""

from __future__ import annotations

import graphlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

from .llm import (
    ChatBackend,
    ChatRequest,
    ValidatedCompletionError,
    ValidationFailure,
    complete,
    complete_validated,
)
from .tools.registry import ToolContext, ToolRegistry, invoke

INTENTS = ("factual", "analytical", "exploratory")
ROUTES = ("coordinator", "planner")
CONTEXT_KINDS = ("history", "dialogue_pair", "rag_chunk")

MAX_CRITIQUES = 10
DEFAULT_AVG_THRESHOLD = 0.5
DEFAULT_SINGLE_THRESHOLD = 0.8

OVERLAY_SLOTS = ("domain_vocabulary", "tone", "extra_constraints")

Tracer = Callable[..., Any]


class PlanningError(Exception):
    pass


# -- prompt templates ---------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    role_name: str
    system_text: str
    version: str = "1"
    overlay_slots: tuple[str, ...] = OVERLAY_SLOTS

    def render(self, overlays: Optional[dict[str, str]] = None) -> str:
        """Stock text plus any non-empty overlay sections, in slot order.

        Empty overlays reproduce the stock prompt byte-for-byte.
        """
        parts = [self.system_text]
        for slot in self.overlay_slots:
            text = (overlays or {}).get(slot, "").strip()
            if text:
                title = slot.replace("_", " ").title()
                parts.append(f"\n\n## {title}\n{text}")
        return "".join(parts)


_ROUTER_TEXT = """\
You are the router for a scientific assistant. Classify the user's query as
factual, analytical, or exploratory, and dispatch it: simple queries go
directly to the coordinator for execution, complex ones to the planner for
decomposition. Consider the conversation history and related older
question/answer pairs provided as context. Reply with only a JSON object:
{"intent": "factual|analytical|exploratory", "route": "coordinator|planner",
 "context_refs": [{"kind": "history|dialogue_pair|rag_chunk", "id": "...", "score": 0.0}],
 "rationale": "short reason"}"""

_PLANNER_TEXT = """\
You are the planner for a scientific assistant. You use no tools yourself.
Break the goal into a small ordered set of subtasks, each naming the
capabilities it requires from the provided capability list and any subtasks
it depends on. The dependency graph must be acyclic. Reply with only a JSON
object:
{"goal_summary": "...", "subtasks": [{"subtask_id": "s1", "description": "...",
 "required_capabilities": ["..."], "depends_on": []}]}"""

_COORDINATOR_TEXT = """\
You are the coordinator for a scientific assistant: the tool-using executor.
Work on the given subtask step by step. At each step reply with only a JSON
object, either invoking a capability:
{"action": "tool", "tool": "<name>", "args": {...}}
{"action": "helper", "helper": "<name>", "goal": "..."}
or finishing with an evidence-backed result and your consistency check:
{"action": "final", "result": "...", "consistency_notes": "..."}"""

_RESEARCHER_TEXT = """\
You are the researcher, an evidence-gathering specialist. Use retrieval tools
to collect relevant material for the goal, then return a compact annotated
working set. At each step reply with only a JSON object, either
{"action": "tool", "tool": "<name>", "args": {...}}
or, when done, citing only source ids returned by your own tool calls:
{"action": "final", "items": [{"text": "...", "source_id": "..."}],
 "annotations": "..."}"""

_EVALUATOR_TEXT = """\
You are the evaluator. Review the serialized turn trace (routing decision,
plan, subtask results, draft answer) for completeness, factual grounding, and
internal consistency. Reply with only a JSON object containing at most 10
critiques, each with a severity between 0 and 1:
{"critiques": [{"text": "...", "severity": 0.0}]}"""


def core_prompts() -> dict[str, PromptTemplate]:
    return {
        "router": PromptTemplate("router", _ROUTER_TEXT),
        "planner": PromptTemplate("planner", _PLANNER_TEXT),
        "coordinator": PromptTemplate("coordinator", _COORDINATOR_TEXT),
        "researcher": PromptTemplate("researcher", _RESEARCHER_TEXT),
        "evaluator": PromptTemplate("evaluator", _EVALUATOR_TEXT),
    }


# -- structured outputs -------------------------------------------------------


@dataclass
class ContextRef:
    kind: str
    id: str
    score: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "id": self.id, "score": self.score}


@dataclass
class RouterDecision:
    intent: str
    route: str
    context_refs: list[ContextRef]
    rationale: str

    def to_dict(self) -> dict:
        return {
            "intent": self.intent,
            "route": self.route,
            "context_refs": [r.to_dict() for r in self.context_refs],
            "rationale": self.rationale,
        }


@dataclass
class Subtask:
    subtask_id: str
    description: str
    required_capabilities: list[str] = field(default_factory=list)
    depends_on: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subtask_id": self.subtask_id,
            "description": self.description,
            "required_capabilities": self.required_capabilities,
            "depends_on": self.depends_on,
        }


@dataclass
class Plan:
    subtasks: list[Subtask]
    goal_summary: str

    def to_dict(self) -> dict:
        return {
            "goal_summary": self.goal_summary,
            "subtasks": [s.to_dict() for s in self.subtasks],
        }


@dataclass
class EvidenceItem:
    text: str
    provenance: dict  # {source, score, tool}


@dataclass
class EvidenceSet:
    items: list[EvidenceItem] = field(default_factory=list)
    annotations: str = ""

    def to_dict(self) -> dict:
        return {
            "items": [{"text": i.text, "provenance": i.provenance} for i in self.items],
            "annotations": self.annotations,
        }


@dataclass
class Critique:
    text: str
    severity: float


@dataclass
class EvaluatorReport:
    critiques: list[Critique]
    avg_severity: float
    max_severity: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "critiques": [{"text": c.text, "severity": c.severity} for c in self.critiques],
            "avg_severity": self.avg_severity,
            "max_severity": self.max_severity,
            "passed": self.passed,
        }


@dataclass
class PassDecision:
    passed: bool
    reroute: bool


@dataclass
class SubtaskOutcome:
    subtask_id: str
    result_text: str
    tool_log: list = field(default_factory=list)
    consistency_notes: str = ""
    failed: bool = False


@dataclass
class HelperSpec:
    """Entry in the helper-agent registry; run() receives isolated context."""

    name: str
    description: str
    run: Callable[..., EvidenceSet]


@dataclass
class AgentEnv:
    """Shared wiring for one turn's agent calls."""

    backend: ChatBackend
    prompts: dict[str, str]  # role -> rendered system prompt
    model_id: str
    tracer: Optional[Tracer] = None
    max_validation_attempts: int = 2

    def request(self, role: str, user_content: str, expects_json: bool = True) -> ChatRequest:
        return ChatRequest(
            model_id=self.model_id,
            messages=[
                {"role": "system", "content": self.prompts[role]},
                {"role": "user", "content": user_content},
            ],
            expects_json=expects_json,
        )


def _child_tracer(tracer: Optional[Tracer], parent_id: Optional[str]) -> Optional[Tracer]:
    if tracer is None or parent_id is None:
        return tracer

    def traced(*, agent, phase, payload, latency_ms=None, parent_event_id=None):
        return tracer(
            agent=agent,
            phase=phase,
            payload=payload,
            latency_ms=latency_ms,
            parent_event_id=parent_event_id or parent_id,
        )

    return traced


# -- validators ---------------------------------------------------------------


def validate_router_decision(doc: dict) -> RouterDecision:
    intent = doc.get("intent")
    route_to = doc.get("route")
    if intent not in INTENTS:
        raise ValidationFailure(f"intent must be one of {list(INTENTS)}, got {intent!r}")
    if route_to not in ROUTES:
        raise ValidationFailure(f"route must be one of {list(ROUTES)}, got {route_to!r}")
    refs = []
    for raw in doc.get("context_refs", []):
        kind = raw.get("kind")
        if kind not in CONTEXT_KINDS:
            raise ValidationFailure(f"context ref kind {kind!r} not recognized")
        score = raw.get("score", 0.0)
        if not isinstance(score, (int, float)) or not -1.0 <= score <= 1.0:
            raise ValidationFailure(f"context ref score {score!r} outside [-1, 1]")
        refs.append(ContextRef(kind=kind, id=str(raw.get("id", "")), score=float(score)))
    return RouterDecision(
        intent=intent,
        route=route_to,
        context_refs=refs,
        rationale=str(doc.get("rationale", "")),
    )


def make_plan_validator(capability_names: set[str]) -> Callable[[dict], Plan]:
    def validate(doc: dict) -> Plan:
        raw_subtasks = doc.get("subtasks")
        if not isinstance(raw_subtasks, list) or not raw_subtasks:
            raise ValidationFailure("plan must contain a non-empty subtasks list")
        subtasks = []
        ids = set()
        for raw in raw_subtasks:
            sid = raw.get("subtask_id")
            if not isinstance(sid, str) or not sid:
                raise ValidationFailure("every subtask needs a subtask_id")
            if sid in ids:
                raise ValidationFailure(f"duplicate subtask_id {sid!r}")
            ids.add(sid)
            caps = raw.get("required_capabilities", [])
            unknown = [c for c in caps if c not in capability_names]
            if unknown:
                raise ValidationFailure(
                    f"unknown capabilities {unknown} in subtask {sid!r}"
                )
            subtasks.append(
                Subtask(
                    subtask_id=sid,
                    description=str(raw.get("description", "")),
                    required_capabilities=list(caps),
                    depends_on=list(raw.get("depends_on", [])),
                )
            )
        for st in subtasks:
            for dep in st.depends_on:
                if dep not in ids:
                    raise ValidationFailure(
                        f"subtask {st.subtask_id!r} depends on unknown {dep!r}"
                    )
        try:
            graphlib.TopologicalSorter(
                {st.subtask_id: set(st.depends_on) for st in subtasks}
            ).prepare()
        except graphlib.CycleError as exc:
            raise ValidationFailure(f"dependency graph has a cycle: {exc}")
        return Plan(subtasks=subtasks, goal_summary=str(doc.get("goal_summary", "")))

    return validate


def make_action_validator(
    tool_names: set[str], helper_names: set[str], *, researcher_mode: bool = False,
    seen_source_ids: Optional[set[str]] = None,
) -> Callable[[dict], dict]:
    def validate(doc: dict) -> dict:
        action = doc.get("action")
        if action == "tool":
            if doc.get("tool") not in tool_names:
                raise ValidationFailure(f"unknown tool {doc.get('tool')!r}")
            if not isinstance(doc.get("args", {}), dict):
                raise ValidationFailure("tool args must be an object")
            return doc
        if action == "helper" and not researcher_mode:
            if doc.get("helper") not in helper_names:
                raise ValidationFailure(f"unknown helper {doc.get('helper')!r}")
            if not isinstance(doc.get("goal"), str) or not doc["goal"]:
                raise ValidationFailure("helper action needs a goal string")
            return doc
        if action == "final":
            if researcher_mode:
                items = doc.get("items", [])
                if not isinstance(items, list):
                    raise ValidationFailure("final items must be a list")
                for item in items:
                    sid = item.get("source_id")
                    if seen_source_ids is not None and sid not in seen_source_ids:
                        raise ValidationFailure(
                            f"item cites source_id {sid!r} not returned by any tool call"
                        )
            elif not isinstance(doc.get("result"), str):
                raise ValidationFailure("final action needs a result string")
            return doc
        raise ValidationFailure(f"unrecognized action {action!r}")

    return validate


def validate_evaluator_output(doc: dict) -> list[Critique]:
    raw = doc.get("critiques")
    if not isinstance(raw, list):
        raise ValidationFailure("evaluator output must contain a critiques list")
    critiques = []
    for entry in raw:
        sev = entry.get("severity")
        if not isinstance(sev, (int, float)):
            raise ValidationFailure(f"critique severity {sev!r} is not a number")
        critiques.append(
            Critique(text=str(entry.get("text", "")), severity=min(1.0, max(0.0, float(sev))))
        )
    return critiques


# -- operations ---------------------------------------------------------------


def route(
    env: AgentEnv,
    user_message: str,
    history: list,
    dialogue_hits: list,
    dialogue_k: int = 3,
) -> RouterDecision:
    """Classify intent and dispatch; all routing inputs and the decision are traced."""
    history = history[-10:]
    dialogue_hits = dialogue_hits[:dialogue_k]
    lines = ["Conversation history:"]
    if history:
        lines.extend(f"  [{r.role}] {r.content}" for r in history)
    else:
        lines.append("  (none)")
    lines.append("Related older question/answer pairs:")
    if dialogue_hits:
        for pair, score in dialogue_hits:
            lines.append(f"  [pair:{pair.pair_id} score={score:.3f}] Q: {pair.question}")
    else:
        lines.append("  (none)")
    lines.append(f"User query: {user_message}")
    decision = complete_validated(
        env.backend,
        env.request("router", "\n".join(lines)),
        validate_router_decision,
        env.max_validation_attempts,
        tracer=env.tracer,
        agent="router",
    )
    if env.tracer is not None:
        context = [
            {"chunk_id": f"pair:{pair.pair_id}", "index_name": "dialogue",
             "similarity_rank": rank}
            for rank, (pair, _score) in enumerate(dialogue_hits, start=1)
        ]
        payload = {
            "decision": decision.to_dict(),
            "inputs": {"history": len(history), "dialogue_hits": len(dialogue_hits)},
        }
        if context:
            payload["context"] = context
        env.tracer(agent="router", phase="route", payload=payload)
    return decision


def plan(
    env: AgentEnv,
    goal: str,
    capabilities: list[dict],
    prior_plan: Optional[Plan] = None,
    critiques: Optional[list[Critique]] = None,
) -> Plan:
    """Produce a validated, acyclic plan over the capability namespace."""
    if not capabilities:
        raise PlanningError("capability namespace is empty")
    names = {c["name"] for c in capabilities}
    lines = ["Available capabilities:"]
    lines.extend(f"  - {c['name']} ({c['kind']}): {c['description']}" for c in capabilities)
    if prior_plan is not None:
        lines.append("Your previous plan was rejected by the evaluator:")
        lines.append(f"  {prior_plan.to_dict()}")
        for c in critiques or []:
            lines.append(f"  critique [{c.severity:.2f}]: {c.text}")
        lines.append("Produce a revised plan addressing the critiques.")
    lines.append(f"Goal: {goal}")
    try:
        result = complete_validated(
            env.backend,
            env.request("planner", "\n".join(lines)),
            make_plan_validator(names),
            env.max_validation_attempts,
            tracer=env.tracer,
            agent="planner",
        )
    except ValidatedCompletionError as exc:
        if env.tracer is not None:
            env.tracer(
                agent="planner",
                phase="plan_failure",
                payload={"error": exc.last_error, "attempts": exc.attempts},
            )
        raise PlanningError(str(exc)) from exc
    if env.tracer is not None:
        env.tracer(agent="planner", phase="plan", payload={"plan": result.to_dict()})
    return result


def execute_subtask(
    env: AgentEnv,
    subtask: Subtask,
    registry: ToolRegistry,
    tool_ctx: ToolContext,
    helper_registry: Optional[dict[str, HelperSpec]] = None,
    dep_results: Optional[dict[str, str]] = None,
    max_tool_calls: int = 10,
) -> SubtaskOutcome:
    """Iterative coordinator loop: propose tool/helper calls, then a final result.

    Every event in the loop shares one trace lineage rooted at the
    subtask_start event; the loop is capped at max_tool_calls invocations.
    """
    helper_registry = helper_registry or {}
    parent = None
    if env.tracer is not None:
        evt = env.tracer(
            agent="coordinator",
            phase="subtask_start",
            payload={"subtask_id": subtask.subtask_id, "description": subtask.description},
        )
        parent = getattr(evt, "event_id", None)
    tracer = _child_tracer(env.tracer, parent)
    ctx = replace(tool_ctx, tracer=tracer, parent_event_id=parent)

    lines = [f"Subtask: {subtask.description}"]
    if subtask.required_capabilities:
        lines.append(f"Required capabilities: {', '.join(subtask.required_capabilities)}")
    for dep, text in (dep_results or {}).items():
        lines.append(f"Result of dependency {dep}: {text}")
    messages = [
        {"role": "system", "content": env.prompts["coordinator"]},
        {"role": "user", "content": "\n".join(lines)},
    ]
    validator = make_action_validator(set(registry.names()), set(helper_registry))
    tool_log: list = []
    invocations = 0
    while True:
        request = ChatRequest(model_id=env.model_id, messages=messages, expects_json=True)
        try:
            action = complete_validated(
                env.backend, request, validator, env.max_validation_attempts,
                tracer=tracer, agent="coordinator",
            )
        except ValidatedCompletionError as exc:
            return _subtask_failure(env, tracer, subtask, tool_log, str(exc))
        if action["action"] == "final":
            outcome = SubtaskOutcome(
                subtask_id=subtask.subtask_id,
                result_text=action["result"],
                tool_log=tool_log,
                consistency_notes=str(action.get("consistency_notes", "")),
            )
            if tracer is not None:
                tracer(
                    agent="coordinator",
                    phase="subtask_result",
                    payload={
                        "subtask_id": subtask.subtask_id,
                        "result_text": outcome.result_text,
                        "tool_calls": len(tool_log),
                        "consistency_notes": outcome.consistency_notes,
                    },
                )
            return outcome
        if invocations >= max_tool_calls:
            return _subtask_failure(
                env, tracer, subtask, tool_log,
                f"tool call cap exceeded ({max_tool_calls})",
            )
        invocations += 1
        if action["action"] == "tool":
            envelope = invoke(registry, action["tool"], action.get("args", {}), ctx)
            tool_log.append(envelope)
            feedback = {
                "tool": action["tool"],
                "envelope": envelope.to_dict(),
            }
        else:
            helper = helper_registry[action["helper"]]
            evidence = helper.run(
                env, action["goal"], registry, tool_ctx, max_tool_calls=max_tool_calls
            )
            feedback = {"helper": action["helper"], "evidence": evidence.to_dict()}
        messages = messages + [
            {"role": "user", "content": f"Capability result: {feedback}"}
        ]


def _subtask_failure(env, tracer, subtask, tool_log, error: str) -> SubtaskOutcome:
    if tracer is not None:
        tracer(
            agent="coordinator",
            phase="subtask_failure",
            payload={"subtask_id": subtask.subtask_id, "error": error},
        )
    return SubtaskOutcome(
        subtask_id=subtask.subtask_id,
        result_text=f"subtask failed: {error}",
        tool_log=tool_log,
        failed=True,
    )


def research(
    env: AgentEnv,
    goal: str,
    registry: ToolRegistry,
    tool_ctx: ToolContext,
    max_tool_calls: int = 10,
) -> EvidenceSet:
    """Evidence-gathering helper with isolated context.

    The returned items may only cite source ids that appeared in this
    call's own tool envelopes.
    """
    parent = None
    user_content = f"Goal: {goal}"
    if env.tracer is not None:
        evt = env.tracer(
            agent="researcher",
            phase="helper_start",
            payload={
                "helper": "researcher",
                "goal": goal,
                "system_prompt": env.prompts["researcher"],
                "user_prompt": user_content,
            },
        )
        parent = getattr(evt, "event_id", None)
    tracer = _child_tracer(env.tracer, parent)
    ctx = replace(tool_ctx, tracer=tracer, parent_event_id=parent)

    messages = [
        {"role": "system", "content": env.prompts["researcher"]},
        {"role": "user", "content": user_content},
    ]
    seen: dict[str, dict] = {}
    tool_log: list = []
    invocations = 0
    while True:
        validator = make_action_validator(
            set(registry.names()), set(), researcher_mode=True,
            seen_source_ids=set(seen),
        )
        request = ChatRequest(model_id=env.model_id, messages=messages, expects_json=True)
        try:
            action = complete_validated(
                env.backend, request, validator, env.max_validation_attempts,
                tracer=tracer, agent="researcher",
            )
        except ValidatedCompletionError as exc:
            evidence = EvidenceSet(items=[], annotations=f"research failed: {exc}")
            break
        if action["action"] == "final":
            items = []
            for raw in action.get("items", []):
                prov = seen.get(raw.get("source_id"), {})
                items.append(
                    EvidenceItem(
                        text=str(raw.get("text", "")),
                        provenance={
                            "source": prov.get("source", raw.get("source_id")),
                            "score": prov.get("score"),
                            "tool": prov.get("tool"),
                            "source_id": raw.get("source_id"),
                        },
                    )
                )
            evidence = EvidenceSet(items=items, annotations=str(action.get("annotations", "")))
            break
        if invocations >= max_tool_calls:
            evidence = EvidenceSet(items=[], annotations="tool call cap exceeded")
            break
        invocations += 1
        envelope = invoke(registry, action["tool"], action.get("args", {}), ctx)
        tool_log.append(envelope)
        if envelope.status == "ok" and isinstance(envelope.result, dict):
            for row in envelope.result.get("matches", []):
                seen[row["chunk_id"]] = {
                    "source": row["source_path"],
                    "score": row["score"],
                    "tool": action["tool"],
                }
            for rec in envelope.result.get("records", []):
                seen[rec["identifier"]] = {
                    "source": rec["identifier"],
                    "score": None,
                    "tool": action["tool"],
                }
        messages = messages + [
            {"role": "user", "content": f"Tool result: {envelope.to_dict()}"}
        ]
    if tracer is not None:
        tracer(
            agent="researcher",
            phase="evidence",
            payload={
                "count": len(evidence.items),
                "source_ids": [i.provenance.get("source_id") for i in evidence.items],
            },
        )
    return evidence


def core_helpers() -> dict[str, HelperSpec]:
    def run_researcher(env, goal, registry, tool_ctx, max_tool_calls=10):
        return research(env, goal, registry, tool_ctx, max_tool_calls=max_tool_calls)

    return {
        "researcher": HelperSpec(
            name="researcher",
            description="Evidence-gathering specialist over local and literature sources.",
            run=run_researcher,
        )
    }


def evaluate(
    env: AgentEnv,
    trace_digest: dict,
    avg_threshold: float = DEFAULT_AVG_THRESHOLD,
    single_threshold: float = DEFAULT_SINGLE_THRESHOLD,
) -> Optional[EvaluatorReport]:
    """Review the turn digest; None means the evaluator was unavailable."""
    user_content = "Turn trace digest:\n" + json.dumps(trace_digest, indent=2, sort_keys=True)
    try:
        critiques = complete_validated(
            env.backend,
            env.request("evaluator", user_content),
            validate_evaluator_output,
            env.max_validation_attempts,
            tracer=env.tracer,
            agent="evaluator",
        )
    except ValidatedCompletionError as exc:
        if env.tracer is not None:
            env.tracer(
                agent="system",
                phase="warning",
                payload={"message": f"evaluator unavailable this turn: {exc}"},
            )
        return None
    if len(critiques) > MAX_CRITIQUES:
        if env.tracer is not None:
            env.tracer(
                agent="system",
                phase="warning",
                payload={
                    "message": f"evaluator critiques truncated from "
                    f"{len(critiques)} to {MAX_CRITIQUES}"
                },
            )
        critiques = critiques[:MAX_CRITIQUES]
    severities = [c.severity for c in critiques]
    avg = sum(severities) / len(severities) if severities else 0.0
    worst = max(severities) if severities else 0.0
    decision = decide_pass_values(avg, worst, avg_threshold, single_threshold)
    report = EvaluatorReport(
        critiques=critiques, avg_severity=avg, max_severity=worst, passed=decision.passed
    )
    if env.tracer is not None:
        env.tracer(agent="evaluator", phase="evaluate", payload={"report": report.to_dict()})
    return report


def decide_pass_values(
    avg_severity: float,
    max_severity: float,
    avg_threshold: float,
    single_threshold: float,
) -> PassDecision:
    for name, value in (("avg_threshold", avg_threshold), ("single_threshold", single_threshold)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")
    failed = avg_severity > avg_threshold or max_severity > single_threshold
    return PassDecision(passed=not failed, reroute=failed)


def decide_pass(
    report: EvaluatorReport, avg_threshold: float, single_threshold: float
) -> PassDecision:
    """Fail iff avg > avg_threshold OR max > single_threshold (strict)."""
    return decide_pass_values(
        report.avg_severity, report.max_severity, avg_threshold, single_threshold
    )


def synthesize(
    env: AgentEnv,
    user_message: str,
    subtask_results: dict[str, str],
) -> str:
    """Coordinator-role completion merging all subtask results into a draft answer."""
    lines = [
        "Synthesize a single coherent, evidence-backed answer to the user's query "
        "from the subtask results below. Reply with plain text.",
        f"User query: {user_message}",
        "Subtask results:",
        json.dumps(subtask_results, indent=2, sort_keys=True),
    ]
    request = ChatRequest(
        model_id=env.model_id,
        messages=[
            {"role": "system", "content": env.prompts["coordinator"]},
            {"role": "user", "content": "\n".join(lines)},
        ],
    )
    response = complete(env.backend, request, tracer=env.tracer, agent="coordinator")
    if env.tracer is not None:
        env.tracer(
            agent="coordinator", phase="synthesis", payload={"draft_answer": response.content}
        )
    return response.content
