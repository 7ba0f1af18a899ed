"""Core topology, turn execution, evaluator gating, and graph augmentation."""

import json

import pytest

from sciassist.extensions import GRAPH_BUILDERS
from sciassist.graph import (
    END,
    Edge,
    GraphValidationError,
    StateGraph,
    TurnState,
    augment,
    build_core_graph,
)

from conftest import (
    analytical_turn_steps,
    evaluator_step,
    factual_turn_steps,
    final_step,
    planner_step,
    router_step,
    synthesis_step,
)


def single_subtask_plan():
    return [{"subtask_id": "only", "description": "do the thing",
             "required_capabilities": [], "depends_on": []}]


def reroute_script(iterations, final_severities=(1.0,)):
    """Always-fail evaluator for `iterations` rounds, then the given final round."""
    steps = [router_step("planner", "analytical")]
    for _ in range(iterations):
        steps += [
            planner_step(single_subtask_plan()),
            final_step("round result"),
            synthesis_step("round draft"),
            evaluator_step([1.0]),
        ]
    steps += [
        planner_step(single_subtask_plan()),
        final_step("final round result"),
        synthesis_step("final draft"),
        evaluator_step(list(final_severities)),
    ]
    return steps


def phases_of(runtime, session_id):
    return [e.phase for e in runtime.hub.events(session_id)]


class TestTopology:
    def test_evaluator_disabled_has_no_evaluator_node(self):
        graph = build_core_graph(False)
        assert "evaluator" not in graph.nodes
        assert sorted(graph.nodes) == ["coordinator", "planner", "router", "synthesis"]

    def test_evaluator_enabled_adds_one_node_and_two_edges(self):
        disabled = build_core_graph(False)
        enabled = build_core_graph(True)
        assert len(enabled.nodes) == len(disabled.nodes) + 1
        assert len(enabled.edges) == len(disabled.edges) + 2

    def test_core_graphs_validate(self):
        build_core_graph(False).validate()
        build_core_graph(True).validate()

    def test_missing_entry_rejected(self):
        graph = StateGraph(nodes={"a": lambda s, h: None}, edges=[], entry="nope")
        with pytest.raises(GraphValidationError):
            graph.validate()

    def test_dangling_edge_rejected(self):
        graph = StateGraph(
            nodes={"a": lambda s, h: None},
            edges=[Edge("a", "ghost")],
            entry="a",
        )
        with pytest.raises(GraphValidationError):
            graph.validate()

    def test_no_terminal_path_rejected(self):
        graph = StateGraph(
            nodes={"a": lambda s, h: None, "b": lambda s, h: None},
            edges=[Edge("a", "b"), Edge("b", "a")],
            entry="a",
        )
        with pytest.raises(GraphValidationError):
            graph.validate()

    def test_topology_document_lists_conditions_as_labels(self):
        doc = build_core_graph(True).to_document()
        labels = {(e["from"], e["to"]): e["condition"] for e in doc["edges"]}
        assert labels[("router", "coordinator")] == "route==coordinator"
        assert END in doc["nodes"]


class TestFactualTurn:
    def test_direct_route_skips_planning(self, runtime_factory):
        rt = runtime_factory(script_steps=factual_turn_steps())
        session = rt.create_session().session_id
        result = rt.post_message(session, "what is the neutron flux profile?")
        assert result.final_answer == "hello-response"
        phases = phases_of(rt, session)
        assert "plan" not in phases
        assert phases.index("route") < phases.index("tool_call") < phases.index("synthesis")
        state_record = rt.memory.reconstruct_session(session)
        assert [r.role for r in state_record] == ["user", "assistant"]

    def test_turn_events_include_transitions_for_each_executed_edge(self, runtime_factory):
        rt = runtime_factory(script_steps=factual_turn_steps())
        session = rt.create_session().session_id
        rt.post_message(session, "q")
        transitions = [
            e.payload for e in rt.hub.events(session) if e.phase == "transition"
        ]
        hops = [(t["from"], t["to"]) for t in transitions]
        assert hops == [("router", "coordinator"), ("coordinator", "synthesis"),
                        ("synthesis", "end")]

    def test_dialogue_pair_recorded(self, runtime_factory):
        rt = runtime_factory(script_steps=factual_turn_steps())
        session = rt.create_session().session_id
        rt.post_message(session, "what is flux?")
        assert len(rt.dialogue) == 1


class TestAnalyticalTurn:
    def test_two_subtasks_two_lineages_synthesized_answer(self, runtime_factory):
        rt = runtime_factory(script_steps=analytical_turn_steps("the analysis"))
        session = rt.create_session().session_id
        result = rt.post_message(session, "compare flux profiles across cores")
        assert result.final_answer == "the analysis"
        events = rt.hub.events(session)
        starts = [e for e in events if e.phase == "subtask_start"]
        assert [s.payload["subtask_id"] for s in starts] == ["s1", "s2"]
        # Each subtask's events form an independent lineage under its start event.
        for start in starts:
            children = [e for e in events if e.parent_event_id == start.event_id]
            assert children, f"no lineage under {start.payload['subtask_id']}"
        plan_events = [e for e in events if e.phase == "plan"]
        assert len(plan_events) == 1

    def test_event_count_is_reported(self, runtime_factory):
        rt = runtime_factory(script_steps=analytical_turn_steps())
        session = rt.create_session().session_id
        result = rt.post_message(session, "q")
        assert result.event_count == len(rt.hub.events(session))
        assert result.event_count > 0


class TestEvaluatorGating:
    def test_fail_then_pass_re_enters_planner_once(self, runtime_factory):
        steps = reroute_script(iterations=1, final_severities=(0.1,))
        rt = runtime_factory(script_steps=steps, evaluator=True)
        session = rt.create_session().session_id
        result = rt.post_message(session, "analyze this")
        assert result.final_answer == "final draft"
        assert result.evaluator == {
            "passed": True, "avg_severity": 0.1, "max_severity": 0.1,
        }
        phases = phases_of(rt, session)
        assert phases.count("plan") == 2
        evaluates = [e for e in rt.hub.events(session) if e.phase == "evaluate"]
        assert [e.payload["report"]["passed"] for e in evaluates] == [False, True]

    def test_passing_turn_with_evaluator_summary(self, runtime_factory):
        rt = runtime_factory(
            script_steps=analytical_turn_steps(evaluator_severities=[0.2, 0.4]),
            evaluator=True,
        )
        session = rt.create_session().session_id
        result = rt.post_message(session, "q")
        assert result.evaluator["passed"]
        assert result.evaluator["avg_severity"] == pytest.approx(0.3)

    def test_replan_prompt_contains_prior_plan_and_critiques(self, runtime_factory):
        steps = reroute_script(iterations=1, final_severities=(0.0,))
        rt = runtime_factory(script_steps=steps, evaluator=True)
        session = rt.create_session().session_id
        rt.post_message(session, "q")
        backend = rt.backend_for(session)
        planner_calls = [
            r for r in backend.call_log
            if "subtasks" in r.messages[0]["content"] and r.expects_json
        ]
        second_planner_prompt = planner_calls[1].messages[-1]["content"]
        assert "rejected by the evaluator" in second_planner_prompt
        assert "critique" in second_planner_prompt

    @pytest.mark.parametrize("max_iterations", [0, 1, 2, 3])
    def test_always_fail_terminates_within_bound(self, runtime_factory, max_iterations):
        steps = reroute_script(iterations=max_iterations, final_severities=(1.0,))
        rt = runtime_factory(
            script_steps=steps,
            evaluator=True,
            runtime_extra={"max_iterations": max_iterations},
        )
        session = rt.create_session().session_id
        result = rt.post_message(session, "q")
        assert result.final_answer == "final draft"
        assert phases_of(rt, session).count("plan") == max_iterations + 1


class TestReplayDeterminism:
    MASKED = {"timestamp_ms", "latency_ms"}

    def _masked_events(self, rt, session):
        out = []
        for e in rt.hub.events(session):
            doc = e.to_dict()
            for key in self.MASKED:
                doc.pop(key, None)
            out.append(doc)
        return out

    def test_same_script_twice_yields_identical_masked_sequences(self, runtime_factory):
        sequences = []
        for _ in range(2):
            rt = runtime_factory(script_steps=analytical_turn_steps())
            session = rt.create_session(session_id="replay").session_id
            rt.post_message(session, "compare flux profiles")
            sequences.append(self._masked_events(rt, session))
        assert sequences[0] == sequences[1]

    def test_event_count_is_a_pure_function_of_the_script(self, runtime_factory):
        counts = []
        for _ in range(2):
            rt = runtime_factory(script_steps=factual_turn_steps())
            session = rt.create_session().session_id
            counts.append(rt.post_message(session, "q").event_count)
        assert counts[0] == counts[1]


class TestFailureHandling:
    def test_node_failure_yields_error_answer_not_a_crash(self, runtime_factory):
        # Script covers only the router; the planner's completion will hit an
        # exhausted script and the turn must degrade to an error answer.
        rt = runtime_factory(script_steps=[router_step("planner", "analytical")])
        session = rt.create_session().session_id
        result = rt.post_message(session, "q")
        assert "could not complete" in result.final_answer
        phases = phases_of(rt, session)
        assert "error" in phases
        assert phases[-1] == "turn_end"

    def test_failed_subtask_keeps_turn_alive_with_partial_results(self, runtime_factory):
        steps = [
            router_step("planner", "analytical"),
            planner_step([
                {"subtask_id": "s1", "description": "a",
                 "required_capabilities": [], "depends_on": []},
                {"subtask_id": "s2", "description": "b",
                 "required_capabilities": [], "depends_on": []},
            ]),
            {"response": "not json"},  # s1 proposal fails validation twice
            {"response": "still not json"},
            final_step("s2 fine"),
            synthesis_step("partial answer"),
        ]
        rt = runtime_factory(script_steps=steps)
        session = rt.create_session().session_id
        result = rt.post_message(session, "q")
        assert result.final_answer == "partial answer"
        assert "subtask_failure" in phases_of(rt, session)


class TestAugment:
    def test_pass_through_node_increases_node_count(self):
        core = build_core_graph(False)
        augmented = augment(core, GRAPH_BUILDERS["post_synthesis_note"])
        assert len(augmented.nodes) == len(core.nodes) + 1
        assert "project_note" in augmented.nodes

    def test_builder_deleting_router_is_rejected(self):
        def bad_builder(graph):
            del graph.nodes["router"]
            return graph

        with pytest.raises(GraphValidationError):
            augment(build_core_graph(False), bad_builder)

    def test_builder_breaking_validation_is_rejected(self):
        def bad_builder(graph):
            graph.edges.append(Edge("synthesis", "ghost"))
            return graph

        with pytest.raises(GraphValidationError):
            augment(build_core_graph(False), bad_builder)

    def test_augmented_run_emits_custom_node_event(self, project_factory):
        project = project_factory(
            script_steps=factual_turn_steps(),
            manifest_extra={
                "toggles": {"graph": True},
                "extensions": {"graph_module": "graph_ext.json"},
            },
        )
        (project / "graph_ext.json").write_text(
            json.dumps({"builder": "post_synthesis_note"}), "utf-8"
        )
        from conftest import make_runtime

        rt = make_runtime(project)
        try:
            session = rt.create_session().session_id
            rt.post_message(session, "q")
            events = rt.hub.events(session)
            customs = [e for e in events if e.phase == "custom_node"]
            assert len(customs) == 1
            assert customs[0].payload["node"] == "project_note"
        finally:
            rt.close()


class TestStepCap:
    def test_step_cap_halts_a_runaway_loop(self, runtime_factory):
        rt = runtime_factory(script_steps=factual_turn_steps())

        def noop(state, handle):
            pass

        runaway = StateGraph(
            nodes={"a": noop, "b": noop},
            edges=[
                Edge("a", "b"),
                Edge("b", "a"),
                Edge("a", END, label="never", condition=lambda s: False),
            ],
            entry="a",
        )
        runaway.validate()  # statically fine: END is reachable on paper
        from sciassist.graph import run_turn, TurnState

        session = rt.create_session().session_id
        state = TurnState(session_id=session, turn_id=1, user_message="q")
        run_turn(runaway, state, rt)
        assert "exceeded" in (state.error or "")
        assert "could not complete" in state.final_answer
