"""Append-only message store and dialogue vector index."""

import random
import string
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sciassist.db import Database, SchemaVersionError
from sciassist.embed import HashEmbedder
from sciassist.memory import (
    DialogueIndex,
    MemoryStore,
    MemoryValidationError,
    MessageRecord,
)


@pytest.fixture
def db(tmp_path):
    database = Database(tmp_path / "store.sqlite3")
    yield database
    database.close()


@pytest.fixture
def store(db):
    return MemoryStore(db)


@pytest.fixture
def dialogue(db):
    return DialogueIndex(db, HashEmbedder(64))


def record(session="s1", turn=1, role="user", content="hi", metadata=None):
    return MessageRecord(
        session_id=session, turn=turn, role=role, content=content, metadata=metadata or {}
    )


class TestAppendMessage:
    def test_append_to_empty_store_returns_index_1(self, store):
        assert store.append_message(record()) == 1

    def test_three_appends_read_back_in_insertion_order(self, store):
        for i in range(3):
            store.append_message(record(content=f"m{i}", turn=i + 1))
        history = store.get_history("s1", 10)
        assert [r.content for r in history] == ["m0", "m1", "m2"]

    def test_unknown_role_rejected(self, store):
        with pytest.raises(MemoryValidationError):
            store.append_message(record(role="critic"))

    def test_turn_zero_rejected(self, store):
        with pytest.raises(MemoryValidationError):
            store.append_message(record(turn=0))

    def test_metadata_keys_are_closed_per_role(self, store):
        store.append_message(
            record(role="planner", metadata={"planning_patches": [{"op": "add"}]})
        )
        with pytest.raises(MemoryValidationError):
            store.append_message(record(role="user", metadata={"scratchpad": "x"}))

    def test_readers_see_consistent_snapshots_during_writes(self, store):
        stop = threading.Event()
        problems = []

        def reader():
            while not stop.is_set():
                history = store.reconstruct_session("s1")
                contents = [r.content for r in history]
                if contents != [f"m{i}" for i in range(len(contents))]:
                    problems.append(contents)

        thread = threading.Thread(target=reader)
        thread.start()
        for i in range(200):
            store.append_message(record(content=f"m{i}", turn=i + 1))
        stop.set()
        thread.join()
        assert not problems


class TestGetHistory:
    def test_most_recent_two_of_five_oldest_first(self, store):
        for i in range(1, 6):
            store.append_message(record(content=f"m{i}", turn=i))
        history = store.get_history("s1", 2)
        assert [r.content for r in history] == ["m4", "m5"]

    def test_limit_zero_is_empty(self, store):
        store.append_message(record())
        assert store.get_history("s1", 0) == []

    def test_unknown_session_is_empty(self, store):
        assert store.get_history("ghost", 5) == []

    def test_negative_limit_rejected(self, store):
        with pytest.raises(MemoryValidationError):
            store.get_history("s1", -1)


class TestReconstructSession:
    def test_three_appends_reconstruct_fully(self, store):
        for i in range(3):
            store.append_message(record(content=f"m{i}", turn=i + 1))
        assert len(store.reconstruct_session("s1")) == 3

    def test_interleaved_sessions_reconstruct_independently(self, store):
        for i in range(4):
            store.append_message(record(session="a", content=f"a{i}", turn=i + 1))
            store.append_message(record(session="b", content=f"b{i}", turn=i + 1))
        assert [r.content for r in store.reconstruct_session("a")] == ["a0", "a1", "a2", "a3"]
        assert [r.content for r in store.reconstruct_session("b")] == ["b0", "b1", "b2", "b3"]

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["x", "y"]),
                st.sampled_from(sorted(["user", "assistant", "planner"])),
                st.text(string.printable, max_size=40),
            ),
            max_size=30,
        )
    )
    def test_roundtrip_matches_shadow_list(self, tmp_path_factory, entries):
        db = Database(tmp_path_factory.mktemp("mem") / "s.sqlite3")
        try:
            store = MemoryStore(db)
            shadow = {"x": [], "y": []}
            for i, (session, role, content) in enumerate(entries):
                store.append_message(
                    record(session=session, turn=i + 1, role=role, content=content)
                )
                shadow[session].append((i + 1, role, content))
            for session in ("x", "y"):
                got = [
                    (r.turn, r.role, r.content)
                    for r in store.reconstruct_session(session)
                ]
                assert got == shadow[session]
        finally:
            db.close()


class TestDialoguePairs:
    def test_first_pair_self_retrieves_at_rank_1(self, dialogue):
        embedder = HashEmbedder(64)
        pair_id = dialogue.record_pair("what is flux?", "a flow rate", "s1", 1)
        hits = dialogue.search(embedder.embed_text("what is flux?\na flow rate"), 1)
        assert hits[0][0].pair_id == pair_id
        assert hits[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_empty_answer_rejected(self, dialogue):
        with pytest.raises(MemoryValidationError):
            dialogue.record_pair("question?", "", "s1", 1)

    def test_query_matching_pair_7_ranks_it_first(self, dialogue):
        embedder = HashEmbedder(64)
        questions = [
            "how does neutron moderation work",
            "what alloys resist creep",
            "why does sodium ignite in air",
            "when was the tokamak invented",
            "where are fuel rods stored",
            "which solvent dissolves cellulose",
            "what sets the critical mass",
            "how do heat pipes move energy",
            "who measured the electron charge",
            "what limits turbine inlet temperature",
        ]
        for i, q in enumerate(questions):
            dialogue.record_pair(q, f"answer number {i}", "s1", i + 1)
        target_pair = 7  # 1-based pair_id of questions[6]
        query = embedder.embed_text(questions[6] + "\nanswer number 6")
        # Independent brute-force cosine over all 10 pairs.
        scores = [
            (p.pair_id, float(np.dot(p.embedding, query))) for p in dialogue._pairs
        ]
        best = sorted(scores, key=lambda t: (-t[1], t[0]))[0][0]
        assert best == target_pair
        assert dialogue.search(query, 1)[0][0].pair_id == target_pair

    def test_empty_index_returns_nothing(self, dialogue):
        embedder = HashEmbedder(64)
        assert dialogue.search(embedder.embed_text("anything"), 5) == []

    def test_k_larger_than_count_returns_all(self, dialogue):
        embedder = HashEmbedder(64)
        for i in range(3):
            dialogue.record_pair(f"q{i}", f"a{i}", "s1", i + 1)
        assert len(dialogue.search(embedder.embed_text("q1"), 50)) == 3

    def test_dimension_mismatch_rejected(self, dialogue):
        with pytest.raises(MemoryValidationError):
            dialogue.search(np.zeros(16), 3)

    def test_search_equals_bruteforce_oracle(self, dialogue):
        rng = random.Random(42)
        embedder = HashEmbedder(64)
        for i in range(120):
            words = " ".join(
                "".join(rng.choices(string.ascii_lowercase, k=5)) for _ in range(6)
            )
            dialogue.record_pair(words, f"answer {i}", "s1", i + 1)
        for trial in range(10):
            query = embedder.embed_text(
                " ".join("".join(rng.choices(string.ascii_lowercase, k=5)) for _ in range(4))
            )
            k = rng.randint(0, 15)
            naive = sorted(
                ((p, float(np.dot(p.embedding, query))) for p in dialogue._pairs),
                key=lambda t: (-t[1], t[0].pair_id),
            )[:k]
            got = dialogue.search(query, k)
            assert [(p.pair_id) for p, _ in got] == [(p.pair_id) for p, _ in naive]
            for (_, s1), (_, s2) in zip(got, naive):
                assert abs(s1 - s2) < 1e-9

    def test_pairs_survive_reopen(self, tmp_path):
        db = Database(tmp_path / "d.sqlite3")
        dialogue = DialogueIndex(db, HashEmbedder(64))
        dialogue.record_pair("q", "a", "s1", 1)
        db.close()
        db2 = Database(tmp_path / "d.sqlite3")
        reopened = DialogueIndex(db2, HashEmbedder(64))
        assert len(reopened) == 1
        db2.close()


class TestSchemaVersioning:
    def test_refuses_mismatched_schema_version(self, tmp_path):
        path = tmp_path / "v.sqlite3"
        db = Database(path)
        db.write("UPDATE meta SET value='999' WHERE key='schema_version'")
        db.close()
        with pytest.raises(SchemaVersionError):
            Database(path)
