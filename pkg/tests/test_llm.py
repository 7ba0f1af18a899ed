"""Mock backend scripting, JSON extraction, and validated retry."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from sciassist.llm import (
    ChatRequest,
    JsonExtractionError,
    MockBackend,
    MockScriptError,
    ScriptStep,
    ValidatedCompletionError,
    ValidationFailure,
    complete,
    complete_validated,
    extract_json,
)


def request(content="hello", system=None):
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": content})
    return ChatRequest(model_id="mock", messages=messages)


class TestChatRequest:
    def test_requires_at_least_one_message(self):
        with pytest.raises(ValueError):
            ChatRequest(model_id="m", messages=[])

    def test_rejects_unknown_roles(self):
        with pytest.raises(ValueError):
            ChatRequest(model_id="m", messages=[{"role": "tool", "content": "x"}])

    def test_rejects_negative_temperature(self):
        with pytest.raises(ValueError):
            ChatRequest(
                model_id="m",
                messages=[{"role": "user", "content": "x"}],
                temperature=-0.1,
            )


class TestMockBackend:
    def test_scripted_hello(self):
        backend = MockBackend([ScriptStep("hello")])
        assert complete(backend, request()).content == "hello"

    def test_exhausted_script_is_a_loud_error(self):
        backend = MockBackend([ScriptStep("one")])
        complete(backend, request())
        with pytest.raises(MockScriptError):
            complete(backend, request())

    def test_call_log_length_equals_number_of_completes(self):
        backend = MockBackend([ScriptStep("a"), ScriptStep("b"), ScriptStep("c")])
        for _ in range(3):
            complete(backend, request())
        assert len(backend.call_log) == 3

    def test_substring_matcher_enforced(self):
        backend = MockBackend([ScriptStep("ok", expect_substring="magic token")])
        with pytest.raises(MockScriptError):
            complete(backend, request("nothing relevant"))

    def test_substring_matcher_passes_when_present(self):
        backend = MockBackend([ScriptStep("ok", expect_substring="magic")])
        assert complete(backend, request("some magic here")).content == "ok"

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"steps": [{"response": "scripted"}]}), "utf-8")
        backend = MockBackend.from_file(str(path))
        assert complete(backend, request()).content == "scripted"


class TestExtractJson:
    def test_fenced_object(self):
        doc, _ = extract_json('```json\n{"route":"planner"}\n```')
        assert doc == {"route": "planner"}

    def test_prose_wrapped_object(self):
        doc, span = extract_json('Sure! {"a": 1} hope that helps')
        assert doc == {"a": 1}
        start, end = span
        assert 'Sure! {"a": 1} hope that helps'[start:end] == '{"a": 1}'

    def test_no_braces_is_an_extraction_error(self):
        with pytest.raises(JsonExtractionError) as excinfo:
            extract_json("no braces here")
        assert excinfo.value.text == "no braces here"

    def test_first_complete_object_wins(self):
        doc, _ = extract_json('{"broken": } then {"good": true}')
        assert doc == {"good": True}

    def test_nested_objects_parse_fully(self):
        doc, _ = extract_json('prefix {"a": {"b": [1, 2, {"c": null}]}} suffix')
        assert doc == {"a": {"b": [1, 2, {"c": None}]}}

    @settings(max_examples=60, deadline=None)
    @given(
        st.dictionaries(
            st.text(st.characters(blacklist_categories=("Cs",)), max_size=8),
            st.recursive(
                st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False)
                | st.text(st.characters(blacklist_categories=("Cs",)), max_size=10),
                lambda children: st.lists(children, max_size=3),
                max_leaves=6,
            ),
            max_size=5,
        )
    )
    def test_roundtrip_of_serialized_documents(self, doc):
        serialized = json.dumps(doc)
        extracted, _ = extract_json(f"noise before {serialized} noise after")
        assert extracted == doc


class TestCompleteValidated:
    def _validator(self, doc):
        if doc.get("ok") is not True:
            raise ValidationFailure("ok flag missing")
        return doc

    def test_invalid_then_valid_succeeds_on_attempt_2(self):
        backend = MockBackend(
            [ScriptStep('{"ok": false}'), ScriptStep('{"ok": true}')]
        )
        doc = complete_validated(backend, request(), self._validator, 2)
        assert doc == {"ok": True}
        assert len(backend.call_log) == 2

    def test_single_attempt_failure_is_structured(self):
        backend = MockBackend([ScriptStep('{"ok": false}')])
        with pytest.raises(ValidatedCompletionError) as excinfo:
            complete_validated(backend, request(), self._validator, 1)
        assert excinfo.value.attempts == 1
        assert "ok flag" in excinfo.value.last_error

    def test_always_true_validator_uses_one_attempt(self):
        backend = MockBackend([ScriptStep('{"anything": 1}')])
        doc = complete_validated(backend, request(), lambda d: d, 5)
        assert doc == {"anything": 1}
        assert len(backend.call_log) == 1

    def test_never_exceeds_max_attempts(self):
        backend = MockBackend([ScriptStep("not json at all")] * 10)
        with pytest.raises(ValidatedCompletionError):
            complete_validated(backend, request(), self._validator, 3)
        assert len(backend.call_log) == 3

    def test_corrective_user_message_appended_between_attempts(self):
        backend = MockBackend([ScriptStep('{"ok": false}'), ScriptStep('{"ok": true}')])
        complete_validated(backend, request(), self._validator, 2)
        second_request = backend.call_log[1]
        last = second_request.messages[-1]
        assert last["role"] == "user"
        assert "failed validation" in last["content"]
        assert "ok flag missing" in last["content"]

    def test_max_attempts_must_be_positive(self):
        backend = MockBackend([])
        with pytest.raises(ValueError):
            complete_validated(backend, request(), lambda d: d, 0)


class TestTracing:
    def test_complete_emits_model_call_event(self):
        events = []

        def tracer(**kwargs):
            events.append(kwargs)

        backend = MockBackend([ScriptStep("out")])
        complete(backend, request(), tracer=tracer, agent="router")
        assert len(events) == 1
        assert events[0]["agent"] == "router"
        assert events[0]["phase"] == "model_call"
        assert events[0]["payload"]["model_id"] == "mock"
        assert len(events[0]["payload"]["prompt_hash"]) == 64
