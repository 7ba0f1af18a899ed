"""Directed-state-graph runtime: topology, turn execution, evaluator gating.

The core topology routes each turn through Router, then either straight
to the Coordinator or through the Planner's subtask fan-out, into
Synthesis and (optionally) the Evaluator, whose failures re-enter the
Planner a bounded number of times. Every executed edge emits exactly one
transition event, which makes a turn's event count a pure function of the
path taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .agents import (
    AgentEnv,
    Plan,
    Subtask,
    decide_pass,
    evaluate,
    execute_subtask,
    plan as make_plan,
    route,
    synthesize,
)
from .memory import MessageRecord
from .tools.registry import list_capabilities

END = "end"
CORE_NODE_ORDER = ("router", "planner", "coordinator", "synthesis", "evaluator")


class GraphValidationError(Exception):
    pass


class TurnStateError(Exception):
    pass


@dataclass
class TurnState:
    session_id: str
    turn_id: int
    user_message: str
    router_decision: Any = None
    plan: Optional[Plan] = None
    subtask_results: dict = field(default_factory=dict)
    subtask_outcomes: dict = field(default_factory=dict)
    draft_answer: Optional[str] = None
    evaluator_report: Any = None
    iteration: int = 0
    final_answer: Optional[str] = None
    reroute: bool = False
    error: Optional[str] = None

    def set_final(self, answer: str) -> None:
        if self.final_answer is not None:
            raise TurnStateError("final_answer may only be set once per turn")
        self.final_answer = answer


NodeFn = Callable[[TurnState, "TurnHandle"], None]


@dataclass
class Edge:
    source: str
    target: str
    label: str = ""
    condition: Optional[Callable[[TurnState], bool]] = None


@dataclass
class StateGraph:
    nodes: dict[str, NodeFn]
    edges: list[Edge]
    entry: str

    def validate(self) -> None:
        if self.entry not in self.nodes:
            raise GraphValidationError(f"entry node {self.entry!r} does not exist")
        names = set(self.nodes) | {END}
        for edge in self.edges:
            if edge.source not in self.nodes:
                raise GraphValidationError(f"edge source {edge.source!r} does not exist")
            if edge.target not in names:
                raise GraphValidationError(f"edge target {edge.target!r} does not exist")
        # At least one path from entry must reach the terminal node.
        reachable = {self.entry}
        frontier = [self.entry]
        while frontier:
            current = frontier.pop()
            for edge in self.edges:
                if edge.source == current and edge.target not in reachable:
                    reachable.add(edge.target)
                    frontier.append(edge.target)
        if END not in reachable:
            raise GraphValidationError("no terminal path from entry")

    def next_node(self, current: str, state: TurnState) -> Optional[Edge]:
        for edge in self.edges:
            if edge.source == current and (edge.condition is None or edge.condition(state)):
                return edge
        return None

    def copy(self) -> "StateGraph":
        return StateGraph(dict(self.nodes), list(self.edges), self.entry)

    def to_document(self) -> dict:
        """Topology as data, for the dashboard's graph view."""
        return {
            "entry": self.entry,
            "nodes": sorted(self.nodes) + [END],
            "edges": [
                {"from": e.source, "to": e.target, "condition": e.label}
                for e in self.edges
            ],
        }


class TurnHandle:
    """Per-turn wiring handed to node functions alongside the state."""

    def __init__(self, runtime: Any, state: TurnState):
        self.runtime = runtime
        self.tracer = runtime.tracer_for(state.session_id, state.turn_id)
        self.env: AgentEnv = runtime.agent_env(state.session_id, self.tracer)
        self.tool_ctx = runtime.tool_context(state.session_id, state.turn_id, self.tracer)


# -- core node functions ------------------------------------------------------


def router_node(state: TurnState, handle: TurnHandle) -> None:
    rt = handle.runtime
    history = rt.memory.get_history(state.session_id, 10)
    query_vec = rt.embedder.embed_text(state.user_message)
    hits = rt.dialogue.search(query_vec, rt.params.dialogue_k)
    state.router_decision = route(
        handle.env, state.user_message, history, hits, dialogue_k=rt.params.dialogue_k
    )


def planner_node(state: TurnState, handle: TurnHandle) -> None:
    rt = handle.runtime
    capabilities = list_capabilities(rt.registry, rt.helpers)
    critiques = state.evaluator_report.critiques if state.evaluator_report else None
    prior = state.plan if state.reroute else None
    state.reroute = False
    state.plan = make_plan(
        handle.env, state.user_message, capabilities, prior_plan=prior, critiques=critiques
    )


def _dependency_order(subtasks: list[Subtask]) -> list[Subtask]:
    """Plan order filtered by readiness; deterministic for a fixed plan."""
    done: set[str] = set()
    pending = list(subtasks)
    ordered = []
    while pending:
        progressed = False
        for st in list(pending):
            if set(st.depends_on) <= done:
                ordered.append(st)
                done.add(st.subtask_id)
                pending.remove(st)
                progressed = True
        if not progressed:  # unreachable for validated (acyclic) plans
            raise GraphValidationError("plan dependencies cannot be satisfied")
    return ordered


def coordinator_node(state: TurnState, handle: TurnHandle) -> None:
    rt = handle.runtime
    state.subtask_results = {}
    state.subtask_outcomes = {}
    if state.plan is None:
        subtasks = [Subtask(subtask_id="direct", description=state.user_message)]
    else:
        subtasks = _dependency_order(state.plan.subtasks)
    for st in subtasks:
        deps = {dep: state.subtask_results.get(dep, "") for dep in st.depends_on}
        outcome = execute_subtask(
            handle.env,
            st,
            rt.registry,
            handle.tool_ctx,
            helper_registry=rt.helpers,
            dep_results=deps,
            max_tool_calls=rt.params.max_tool_calls,
        )
        state.subtask_outcomes[st.subtask_id] = outcome
        state.subtask_results[st.subtask_id] = outcome.result_text


def synthesis_node(state: TurnState, handle: TurnHandle) -> None:
    state.draft_answer = synthesize(handle.env, state.user_message, state.subtask_results)


def _trace_digest(state: TurnState) -> dict:
    return {
        "router_decision": state.router_decision.to_dict() if state.router_decision else None,
        "plan": state.plan.to_dict() if state.plan else None,
        "subtask_results": {
            sid: text[:500] for sid, text in state.subtask_results.items()
        },
        "draft_answer": state.draft_answer,
    }


def evaluator_node(state: TurnState, handle: TurnHandle) -> None:
    rt = handle.runtime
    report = evaluate(
        handle.env,
        _trace_digest(state),
        avg_threshold=rt.params.evaluator_avg_threshold,
        single_threshold=rt.params.evaluator_single_threshold,
    )
    state.evaluator_report = report
    if report is None:
        # Evaluator unavailable: the turn passes by default (warning already traced).
        state.reroute = False
        return
    decision = decide_pass(
        report, rt.params.evaluator_avg_threshold, rt.params.evaluator_single_threshold
    )
    if decision.reroute and state.iteration < rt.params.max_iterations:
        state.iteration += 1
        state.reroute = True
    else:
        state.reroute = False


def build_core_graph(evaluator_enabled: bool) -> StateGraph:
    nodes: dict[str, NodeFn] = {
        "router": router_node,
        "planner": planner_node,
        "coordinator": coordinator_node,
        "synthesis": synthesis_node,
    }
    edges = [
        Edge(
            "router",
            "coordinator",
            label="route==coordinator",
            condition=lambda s: s.router_decision is not None
            and s.router_decision.route == "coordinator",
        ),
        Edge("router", "planner", label="route==planner"),
        Edge("planner", "coordinator"),
        Edge("coordinator", "synthesis"),
    ]
    if evaluator_enabled:
        nodes["evaluator"] = evaluator_node
        edges.append(Edge("synthesis", "evaluator"))
        edges.append(Edge("evaluator", "planner", label="reroute", condition=lambda s: s.reroute))
        edges.append(Edge("evaluator", END, label="pass or iterations exhausted"))
    else:
        edges.append(Edge("synthesis", END))
    graph = StateGraph(nodes=nodes, edges=edges, entry="router")
    graph.validate()
    return graph


def augment(core: StateGraph, builder: Callable[[StateGraph], StateGraph]) -> StateGraph:
    """Apply a project graph builder while preserving the core contract.

    Core nodes may not be removed; the result must still validate; nodes
    the builder added are wrapped so their execution is traced.
    """
    candidate = builder(core.copy())
    if not isinstance(candidate, StateGraph):
        raise GraphValidationError("graph builder must return a StateGraph")
    missing = [name for name in core.nodes if name not in candidate.nodes]
    if missing:
        raise GraphValidationError(f"graph builder removed core nodes: {missing}")
    candidate.validate()
    for name in list(candidate.nodes):
        if name not in core.nodes:
            candidate.nodes[name] = _wrap_custom_node(name, candidate.nodes[name])
    return candidate


def _wrap_custom_node(name: str, fn: NodeFn) -> NodeFn:
    def wrapped(state: TurnState, handle: TurnHandle) -> None:
        handle.tracer(agent="system", phase="custom_node", payload={"node": name})
        fn(state, handle)

    return wrapped


# -- turn execution -----------------------------------------------------------


def run_turn(graph: StateGraph, state: TurnState, runtime: Any) -> TurnState:
    """Execute one turn through the graph, tracing every transition.

    Node failures terminate the turn with an error answer and a failure
    event; the user message, final answer, and dialogue pair are persisted.
    """
    if state.iteration != 0 or state.final_answer is not None:
        raise TurnStateError("run_turn requires a fresh TurnState")
    handle = TurnHandle(runtime, state)
    handle.tracer(
        agent="system", phase="turn_start", payload={"user_message": state.user_message}
    )
    runtime.memory.append_message(
        MessageRecord(
            session_id=state.session_id,
            turn=state.turn_id,
            role="user",
            content=state.user_message,
        )
    )
    # Covers the core path at max re-routing plus headroom for project nodes;
    # a dynamically cyclic augmented graph must not spin forever.
    step_limit = 25 * (runtime.params.max_iterations + 2)
    steps = 0
    current = graph.entry
    while current != END:
        steps += 1
        if steps > step_limit:
            state.error = f"graph execution exceeded {step_limit} steps"
            handle.tracer(
                agent="system",
                phase="error",
                payload={"message": state.error, "where": current},
            )
            break
        try:
            graph.nodes[current](state, handle)
        except Exception as exc:
            message = f"{type(exc).__name__}: {exc}"
            handle.tracer(
                agent="system",
                phase="error",
                payload={"message": message, "where": current},
            )
            state.error = message
            break
        edge = graph.next_node(current, state)
        if edge is None:
            state.error = f"no outgoing edge from node {current!r}"
            handle.tracer(
                agent="system",
                phase="error",
                payload={"message": state.error, "where": current},
            )
            break
        handle.tracer(
            agent="system",
            phase="transition",
            payload={"from": edge.source, "to": edge.target, "condition": edge.label},
        )
        current = edge.target
    if state.final_answer is None:
        if state.error is not None:
            state.set_final(f"The assistant could not complete this turn: {state.error}")
        else:
            state.set_final(state.draft_answer or "")
    runtime.memory.append_message(
        MessageRecord(
            session_id=state.session_id,
            turn=state.turn_id,
            role="assistant",
            content=state.final_answer,
        )
    )
    runtime.dialogue.record_pair(
        state.user_message or " ",
        state.final_answer or " ",
        state.session_id,
        state.turn_id,
    )
    handle.tracer(
        agent="system", phase="turn_end", payload={"final_answer": state.final_answer}
    )
    return state
