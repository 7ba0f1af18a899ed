"""Agent operations: routing, planning, subtask execution, research, evaluation."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from sciassist.agents import (
    AgentEnv,
    Critique,
    EvaluatorReport,
    PlanningError,
    Subtask,
    core_helpers,
    core_prompts,
    decide_pass,
    evaluate,
    execute_subtask,
    make_plan_validator,
    plan,
    research,
    route,
    synthesize,
    validate_router_decision,
)
from sciassist.embed import HashEmbedder
from sciassist.llm import MockBackend, ScriptStep, ValidationFailure
from sciassist.memory import MessageRecord
from sciassist.ragindex import IndexStore, scan_and_index
from sciassist.tools import ToolContext, core_registry, list_capabilities

from conftest import DOCS


class RecordingTracer:
    def __init__(self):
        self.events = []
        self._counter = 0

    def __call__(self, **kwargs):
        self._counter += 1
        kwargs["event_id"] = f"t:{self._counter}"
        self.events.append(kwargs)
        return type("Evt", (), {"event_id": kwargs["event_id"]})()

    def phases(self):
        return [e["phase"] for e in self.events]


def env_for(steps, tracer=None, prompts=None):
    rendered = prompts or {role: t.render() for role, t in core_prompts().items()}
    return AgentEnv(
        backend=MockBackend([ScriptStep(s) if isinstance(s, str) else s for s in steps]),
        prompts=rendered,
        model_id="mock",
        tracer=tracer,
    )


@pytest.fixture
def seeded_tool_ctx(tmp_path):
    embedder = HashEmbedder(64)
    docs = tmp_path / "docs"
    docs.mkdir()
    for name, text in DOCS.items():
        (docs / name).write_text(text, "utf-8")
    store = IndexStore(tmp_path / "index", dim=64)
    scan_and_index([docs], store, embedder, base_dir=tmp_path)
    return ToolContext(index_store=store, embedder=embedder)


ROUTER_OK = json.dumps(
    {"intent": "factual", "route": "coordinator", "context_refs": [], "rationale": "simple"}
)


class TestPromptTemplates:
    def test_empty_overlays_reproduce_stock_prompt_byte_for_byte(self):
        for role, template in core_prompts().items():
            assert template.render() == template.system_text
            assert template.render({}) == template.system_text
            assert template.render({"tone": "", "domain_vocabulary": "  "}) == (
                template.system_text
            )

    def test_overlay_sections_appended_in_slot_order(self):
        template = core_prompts()["coordinator"]
        rendered = template.render(
            {"extra_constraints": "cite sources", "domain_vocabulary": "enthalpy"}
        )
        assert rendered.startswith(template.system_text)
        vocab_at = rendered.index("enthalpy")
        constraints_at = rendered.index("cite sources")
        assert vocab_at < constraints_at


class TestRoute:
    def test_coordinator_route_from_scripted_decision(self):
        tracer = RecordingTracer()
        env = env_for([ROUTER_OK], tracer)
        decision = route(env, "what is flux?", [], [])
        assert decision.route == "coordinator"
        assert decision.intent == "factual"
        assert "route" in tracer.phases()

    def test_invalid_enum_then_valid_on_retry(self):
        bad = json.dumps({"intent": "mystery", "route": "coordinator"})
        env = env_for([bad, ROUTER_OK])
        decision = route(env, "q", [], [])
        assert decision.intent == "factual"
        assert len(env.backend.call_log) == 2

    def test_empty_history_and_hits_still_valid(self):
        env = env_for([ROUTER_OK])
        decision = route(env, "q", [], [])
        assert decision.route == "coordinator"

    def test_history_and_dialogue_budget_enforced(self):
        env = env_for([ROUTER_OK])
        history = [
            MessageRecord(session_id="s", turn=i + 1, role="user", content=f"msg-{i}")
            for i in range(25)
        ]
        route(env, "q", history, [], dialogue_k=3)
        prompt = env.backend.call_log[0].messages[-1]["content"]
        assert "msg-24" in prompt and "msg-15" in prompt
        assert "msg-14" not in prompt  # only the last 10 rendered

    def test_context_ref_score_bounds_enforced(self):
        with pytest.raises(ValidationFailure):
            validate_router_decision(
                {
                    "intent": "factual",
                    "route": "coordinator",
                    "context_refs": [{"kind": "history", "id": "1", "score": 1.5}],
                }
            )


class TestPlan:
    CAPS = [
        {"kind": "tool", "name": "rag_query", "description": "search"},
        {"kind": "helper", "name": "researcher", "description": "gather"},
    ]

    def test_two_subtask_linear_plan_accepted(self):
        doc = json.dumps(
            {
                "goal_summary": "g",
                "subtasks": [
                    {"subtask_id": "s1", "description": "a",
                     "required_capabilities": ["rag_query"], "depends_on": []},
                    {"subtask_id": "s2", "description": "b",
                     "required_capabilities": [], "depends_on": ["s1"]},
                ],
            }
        )
        tracer = RecordingTracer()
        env = env_for([doc], tracer)
        result = plan(env, "goal", self.CAPS)
        assert [s.subtask_id for s in result.subtasks] == ["s1", "s2"]
        assert "plan" in tracer.phases()

    def test_unknown_capability_retries_then_fails(self):
        doc = json.dumps(
            {
                "goal_summary": "g",
                "subtasks": [
                    {"subtask_id": "s1", "description": "a",
                     "required_capabilities": ["teleport"], "depends_on": []},
                ],
            }
        )
        tracer = RecordingTracer()
        env = env_for([doc, doc])
        env.tracer = tracer
        with pytest.raises(PlanningError):
            plan(env, "goal", self.CAPS)
        assert len(env.backend.call_log) == 2
        assert "plan_failure" in tracer.phases()

    def test_single_subtask_no_deps_accepted(self):
        doc = json.dumps(
            {"goal_summary": "g", "subtasks": [
                {"subtask_id": "only", "description": "d",
                 "required_capabilities": [], "depends_on": []}]}
        )
        env = env_for([doc])
        assert len(plan(env, "goal", self.CAPS).subtasks) == 1

    def test_empty_capability_namespace_is_a_planning_error(self):
        env = env_for([])
        with pytest.raises(PlanningError):
            plan(env, "goal", [])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.data())
    def test_cycle_injection_always_rejected(self, n, data):
        ids = [f"s{i}" for i in range(n)]
        # Build a random dependency chain, then close a cycle.
        deps = {ids[i]: [ids[i - 1]] if i else [] for i in range(n)}
        a = data.draw(st.integers(0, n - 2))
        deps[ids[a]] = deps[ids[a]] + [ids[n - 1]]
        doc = {
            "goal_summary": "g",
            "subtasks": [
                {"subtask_id": sid, "description": "d",
                 "required_capabilities": [], "depends_on": deps[sid]}
                for sid in ids
            ],
        }
        validator = make_plan_validator({"rag_query"})
        with pytest.raises(ValidationFailure):
            validator(doc)


class TestExecuteSubtask:
    def test_one_rag_query_then_final(self, seeded_tool_ctx):
        steps = [
            json.dumps({"action": "tool", "tool": "rag_query",
                        "args": {"query": "neutron flux"}}),
            json.dumps({"action": "final", "result": "found it",
                        "consistency_notes": "checked"}),
        ]
        tracer = RecordingTracer()
        env = env_for(steps, tracer)
        outcome = execute_subtask(
            env, Subtask("s1", "find flux data"), core_registry(), seeded_tool_ctx
        )
        assert not outcome.failed
        assert outcome.result_text == "found it"
        assert len(outcome.tool_log) == 1
        assert outcome.tool_log[0].status == "ok"
        assert outcome.consistency_notes == "checked"

    def test_final_immediately_means_empty_tool_log(self, seeded_tool_ctx):
        env = env_for([json.dumps({"action": "final", "result": "direct"})])
        outcome = execute_subtask(env, Subtask("s1", "d"), core_registry(), seeded_tool_ctx)
        assert outcome.tool_log == []

    def test_eleven_proposals_with_cap_ten_fails(self, seeded_tool_ctx):
        tool_step = json.dumps(
            {"action": "tool", "tool": "rag_query", "args": {"query": "x"}}
        )
        tracer = RecordingTracer()
        env = env_for([tool_step] * 11, tracer)
        outcome = execute_subtask(
            env, Subtask("s1", "d"), core_registry(), seeded_tool_ctx, max_tool_calls=10
        )
        assert outcome.failed
        assert len(outcome.tool_log) == 10
        assert "subtask_failure" in tracer.phases()

    def test_subtask_events_share_one_lineage(self, seeded_tool_ctx):
        steps = [
            json.dumps({"action": "tool", "tool": "rag_query", "args": {"query": "x"}}),
            json.dumps({"action": "final", "result": "r"}),
        ]
        tracer = RecordingTracer()
        env = env_for(steps, tracer)
        execute_subtask(env, Subtask("s1", "d"), core_registry(), seeded_tool_ctx)
        start = next(e for e in tracer.events if e["phase"] == "subtask_start")
        children = [
            e for e in tracer.events
            if e["phase"] in ("tool_call", "model_call", "subtask_result")
        ]
        assert children, "expected traced child events"
        for event in children:
            assert event.get("parent_event_id") == start["event_id"]

    def test_dependency_results_rendered_into_prompt(self, seeded_tool_ctx):
        env = env_for([json.dumps({"action": "final", "result": "r"})])
        execute_subtask(
            env, Subtask("s2", "summarize", depends_on=["s1"]),
            core_registry(), seeded_tool_ctx, dep_results={"s1": "EVIDENCE-BLOB"},
        )
        assert "EVIDENCE-BLOB" in env.backend.call_log[0].messages[-1]["content"]


class TestResearch:
    def test_items_cite_only_seen_source_ids(self, seeded_tool_ctx):
        tool = json.dumps({"action": "tool", "tool": "rag_query",
                           "args": {"query": "neutron flux", "k": 2}})
        tracer = RecordingTracer()
        env = env_for([tool, tool, "FINAL_PLACEHOLDER"], tracer)

        # First run the two tool steps through a probe to learn real chunk ids.
        probe_env = env_for([tool])
        from sciassist.tools import invoke

        probe = invoke(
            core_registry(), "rag_query", {"query": "neutron flux", "k": 2},
            seeded_tool_ctx,
        )
        chunk_id = probe.result["matches"][0]["chunk_id"]
        final = json.dumps(
            {"action": "final",
             "items": [{"text": "flux evidence", "source_id": chunk_id}],
             "annotations": "ok"}
        )
        env.backend._steps[2] = ScriptStep(final)
        evidence = research(env, "collect flux evidence", core_registry(), seeded_tool_ctx)
        assert len(evidence.items) == 1
        item = evidence.items[0]
        assert item.provenance["source_id"] == chunk_id
        assert item.provenance["source"] == "docs/beta.md"
        assert item.provenance["tool"] == "rag_query"
        assert "evidence" in tracer.phases()

    def test_citing_unknown_source_id_retries(self, seeded_tool_ctx):
        bogus = json.dumps(
            {"action": "final", "items": [{"text": "x", "source_id": "made-up"}]}
        )
        empty = json.dumps({"action": "final", "items": []})
        env = env_for([bogus, empty])
        evidence = research(env, "goal", core_registry(), seeded_tool_ctx)
        assert evidence.items == []
        assert len(env.backend.call_log) == 2

    def test_zero_tool_calls_yields_empty_evidence(self, seeded_tool_ctx):
        env = env_for([json.dumps({"action": "final", "items": []})])
        evidence = research(env, "goal", core_registry(), seeded_tool_ctx)
        assert evidence.items == []

    def test_helper_prompt_is_isolated_from_sibling_content(self, seeded_tool_ctx):
        tracer = RecordingTracer()
        env = env_for([json.dumps({"action": "final", "items": []})], tracer)
        research(env, "narrow goal only", core_registry(), seeded_tool_ctx)
        start = next(e for e in tracer.events if e["phase"] == "helper_start")
        rendered = start["payload"]["system_prompt"] + start["payload"]["user_prompt"]
        assert "narrow goal only" in rendered
        assert "SIBLING-SECRET" not in rendered


class TestEvaluate:
    def test_two_critiques_average_and_max(self):
        env = env_for([json.dumps({"critiques": [
            {"text": "a", "severity": 0.2}, {"text": "b", "severity": 0.4}]})])
        report = evaluate(env, {"draft_answer": "x"})
        assert report.avg_severity == pytest.approx(0.3)
        assert report.max_severity == pytest.approx(0.4)
        assert report.passed

    def test_twelve_critiques_truncated_to_ten_with_note(self):
        tracer = RecordingTracer()
        env = env_for(
            [json.dumps({"critiques": [
                {"text": f"c{i}", "severity": 0.1} for i in range(12)]})],
            tracer,
        )
        report = evaluate(env, {})
        assert len(report.critiques) == 10
        warnings = [e for e in tracer.events if e["phase"] == "warning"]
        assert any("truncated" in w["payload"]["message"] for w in warnings)

    def test_zero_critiques_is_zero_severity_pass(self):
        env = env_for([json.dumps({"critiques": []})])
        report = evaluate(env, {})
        assert report.avg_severity == 0.0
        assert report.max_severity == 0.0
        assert report.passed

    def test_severities_clamped_into_unit_interval(self):
        env = env_for([json.dumps({"critiques": [
            {"text": "a", "severity": 3.5}, {"text": "b", "severity": -1.0}]})])
        report = evaluate(env, {})
        assert [c.severity for c in report.critiques] == [1.0, 0.0]

    def test_validation_failure_means_unavailable_with_warning(self):
        tracer = RecordingTracer()
        env = env_for(["garbage", "more garbage"], tracer)
        report = evaluate(env, {})
        assert report is None
        assert any(
            "unavailable" in e["payload"]["message"]
            for e in tracer.events if e["phase"] == "warning"
        )


class TestDecidePass:
    def _report(self, severities):
        avg = sum(severities) / len(severities) if severities else 0.0
        worst = max(severities) if severities else 0.0
        return EvaluatorReport(
            critiques=[Critique(f"c{i}", s) for i, s in enumerate(severities)],
            avg_severity=avg,
            max_severity=worst,
            passed=True,
        )

    def test_both_below_thresholds_passes(self):
        decision = decide_pass(self._report([0.2, 0.4]), 0.5, 0.8)
        assert decision.passed and not decision.reroute

    def test_single_severity_above_single_threshold_fails(self):
        decision = decide_pass(self._report([0.1, 0.9]), 0.5, 0.8)
        assert not decision.passed and decision.reroute

    def test_average_above_avg_threshold_fails(self):
        decision = decide_pass(self._report([0.6, 0.6]), 0.5, 0.8)
        assert not decision.passed

    def test_exactly_at_threshold_passes_strict_inequality(self):
        decision = decide_pass(self._report([0.5, 0.5]), 0.5, 0.8)
        assert decision.passed

    def test_threshold_bounds_validated(self):
        with pytest.raises(ValueError):
            decide_pass(self._report([0.1]), 1.5, 0.8)

    # The literal "any added critique keeps a failing report failing" does not
    # hold for an avg-triggered failure (a mild critique can drag the mean back
    # under the threshold), so the monotonicity property is tested in its two
    # true forms: the max channel is unconditionally monotone, and the avg
    # channel is monotone whenever the added severity is at least the mean.
    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=9),
        st.floats(0, 1),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_max_triggered_failure_survives_any_added_critique(
        self, severities, extra, avg_t, single_t
    ):
        report = self._report(severities)
        if report.max_severity > single_t:
            after = decide_pass(self._report(severities + [extra]), avg_t, single_t)
            assert not after.passed

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=9),
        st.floats(0, 1),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_adding_a_critique_at_or_above_the_mean_never_flips_fail_to_pass(
        self, severities, extra, avg_t, single_t
    ):
        before = self._report(severities)
        if not decide_pass(before, avg_t, single_t).passed:
            if extra >= before.avg_severity + 1e-9:
                after = decide_pass(self._report(severities + [extra]), avg_t, single_t)
                assert not after.passed


class TestSynthesize:
    def test_draft_comes_from_backend_and_is_traced(self):
        tracer = RecordingTracer()
        env = env_for(["the synthesized draft"], tracer)
        draft = synthesize(env, "question", {"s1": "result one"})
        assert draft == "the synthesized draft"
        synthesis = next(e for e in tracer.events if e["phase"] == "synthesis")
        assert synthesis["payload"]["draft_answer"] == "the synthesized draft"


def test_core_helpers_expose_researcher():
    helpers = core_helpers()
    assert "researcher" in helpers
    assert helpers["researcher"].description
    capabilities = list_capabilities(core_registry(), helpers)
    assert any(c["kind"] == "helper" and c["name"] == "researcher" for c in capabilities)


class TestCoordinatorHelperDispatch:
    def test_helper_proposal_runs_researcher_with_isolated_lineage(self, seeded_tool_ctx):
        steps = [
            json.dumps({"action": "helper", "helper": "researcher",
                        "goal": "dig up flux evidence"}),
            json.dumps({"action": "final", "items": [], "annotations": "none found"}),
            json.dumps({"action": "final", "result": "done with helper support"}),
        ]
        tracer = RecordingTracer()
        env = env_for(steps, tracer)
        outcome = execute_subtask(
            env, Subtask("s1", "needs research", required_capabilities=["researcher"]),
            core_registry(), seeded_tool_ctx, helper_registry=core_helpers(),
        )
        assert outcome.result_text == "done with helper support"
        phases = tracer.phases()
        assert "helper_start" in phases
        assert "evidence" in phases
        # The helper ran between the subtask start and the final result.
        assert phases.index("subtask_start") < phases.index("helper_start")
        # Evidence summary was fed back to the coordinator as a user message.
        final_request = env.backend.call_log[-1]
        assert "evidence" in final_request.messages[-1]["content"]

    def test_unknown_helper_name_fails_validation(self, seeded_tool_ctx):
        steps = [
            json.dumps({"action": "helper", "helper": "oracle", "goal": "g"}),
            json.dumps({"action": "final", "result": "recovered"}),
        ]
        env = env_for(steps)
        outcome = execute_subtask(
            env, Subtask("s1", "d"), core_registry(), seeded_tool_ctx,
            helper_registry=core_helpers(),
        )
        assert outcome.result_text == "recovered"
        assert len(env.backend.call_log) == 2  # invalid proposal consumed a retry
