"""Append-only relational message store plus a dialogue vector index.

Messages are the episodic memory: every record is durable, totally
ordered by insertion, and reconstructable per session. The dialogue index
embeds past question/answer pairs so the router can surface semantically
related older exchanges.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .db import Database
from .embed import EmbeddingBackend
from .trace import canonical_json

ROLES = frozenset(
    {"user", "assistant", "planner", "coordinator", "router", "researcher", "evaluator"}
)

# Closed metadata key set per role; unknown keys are rejected at append.
ROLE_METADATA_KEYS: dict[str, frozenset[str]] = {
    "user": frozenset(),
    "assistant": frozenset({"evaluator", "event_count"}),
    "planner": frozenset({"plan", "planning_patches", "scratchpad"}),
    "coordinator": frozenset({"action_log", "scratchpad", "subtask_id"}),
    "router": frozenset({"decision", "context_refs"}),
    "researcher": frozenset({"action_log", "evidence"}),
    "evaluator": frozenset({"report"}),
}


class MemoryValidationError(Exception):
    pass


@dataclass
class MessageRecord:
    session_id: str
    turn: int
    role: str
    content: str
    metadata: dict = field(default_factory=dict)
    timestamp_ms: int = 0

    def validate(self) -> None:
        if self.turn < 1:
            raise MemoryValidationError("turn must be >= 1")
        if self.role not in ROLES:
            raise MemoryValidationError(f"unknown role: {self.role!r}")
        unknown = set(self.metadata) - ROLE_METADATA_KEYS[self.role]
        if unknown:
            raise MemoryValidationError(
                f"metadata keys {sorted(unknown)} not allowed for role {self.role!r}"
            )


@dataclass
class DialoguePair:
    pair_id: int
    session_id: str
    turn: int
    question: str
    answer: str
    embedding: np.ndarray


class MemoryStore:
    """Event store facade over the shared sqlite database."""

    def __init__(self, db: Database):
        self._db = db

    def append_message(self, record: MessageRecord) -> int:
        """Durably append one record; returns its insertion index."""
        record.validate()
        ts = record.timestamp_ms or int(time.time() * 1000)
        return self._db.write(
            "INSERT INTO messages (session_id, turn, role, content, metadata, timestamp_ms)"
            " VALUES (?, ?, ?, ?, ?, ?)",
            (
                record.session_id,
                record.turn,
                record.role,
                record.content,
                canonical_json(record.metadata),
                ts,
            ),
        )

    def _rows_to_records(self, rows: list[tuple]) -> list[MessageRecord]:
        return [
            MessageRecord(
                session_id=r[0],
                turn=r[1],
                role=r[2],
                content=r[3],
                metadata=json.loads(r[4]),
                timestamp_ms=r[5],
            )
            for r in rows
        ]

    def get_history(self, session_id: str, limit: int) -> list[MessageRecord]:
        """The most recent ``limit`` records, oldest first."""
        if limit < 0:
            raise MemoryValidationError("limit must be >= 0")
        if limit == 0:
            return []
        rows = self._db.read(
            "SELECT session_id, turn, role, content, metadata, timestamp_ms"
            " FROM messages WHERE session_id=? ORDER BY rowid DESC LIMIT ?",
            (session_id, limit),
        )
        return self._rows_to_records(list(reversed(rows)))

    def reconstruct_session(self, session_id: str) -> list[MessageRecord]:
        """Full insertion-ordered history for one session."""
        rows = self._db.read(
            "SELECT session_id, turn, role, content, metadata, timestamp_ms"
            " FROM messages WHERE session_id=? ORDER BY rowid",
            (session_id,),
        )
        return self._rows_to_records(rows)


class DialogueIndex:
    """Semantic index of past question/answer pairs.

    The search structure is held in memory and rebuilt from the store on
    open; writes go through the database first so pairs survive restarts.
    """

    def __init__(self, db: Database, embedder: EmbeddingBackend):
        self._db = db
        self._embedder = embedder
        self._lock = threading.Lock()
        self._pairs: list[DialoguePair] = []
        self._load()

    def _load(self) -> None:
        rows = self._db.read(
            "SELECT pair_id, session_id, turn, question, answer, embedding"
            " FROM dialogue_pairs ORDER BY pair_id"
        )
        for pair_id, session_id, turn, question, answer, blob in rows:
            vec = np.frombuffer(blob, dtype=np.float64)
            self._pairs.append(
                DialoguePair(pair_id, session_id, turn, question, answer, vec)
            )

    def __len__(self) -> int:
        return len(self._pairs)

    def record_pair(
        self, question: str, answer: str, session_id: str, turn: int
    ) -> int:
        """Embed question+answer and make the pair searchable; returns pair_id."""
        if not question or not answer:
            raise MemoryValidationError("question and answer must be non-empty")
        # Embedding input combines both sides so answer content is recallable.
        vec = self._embedder.embed_text(question + "\n" + answer)
        with self._lock:
            pair_id = self._db.write(
                "INSERT INTO dialogue_pairs (session_id, turn, question, answer, embedding)"
                " VALUES (?, ?, ?, ?, ?)",
                (session_id, turn, question, answer, vec.tobytes()),
            )
            self._pairs.append(
                DialoguePair(pair_id, session_id, turn, question, answer, vec)
            )
        return pair_id

    def search(
        self, query_embedding: np.ndarray, k: int
    ) -> list[tuple[DialoguePair, float]]:
        """Exact top-k by cosine, ties broken by ascending pair_id."""
        if k < 0:
            raise MemoryValidationError("k must be >= 0")
        if query_embedding.shape != (self._embedder.dim,):
            raise MemoryValidationError(
                f"query dimension {query_embedding.shape} does not match "
                f"index dimension ({self._embedder.dim},)"
            )
        with self._lock:
            pairs = list(self._pairs)
        scored = [(p, float(np.dot(p.embedding, query_embedding))) for p in pairs]
        scored.sort(key=lambda item: (-item[1], item[0].pair_id))
        return scored[: min(k, len(scored))]
