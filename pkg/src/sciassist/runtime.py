"""Assembles a bootstrapped configuration into a running assistant.

One Runtime per deployment: it owns the store, trace hub, indices, and
per-session backends, and exposes the session/turn/export operations the
gateway and CLI sit on top of.
"""

from __future__ import annotations

import threading
import uuid
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import CORE_VERSION
from .agents import AgentEnv
from .bootstrap import MergedConfig, bootstrap, load_manifest
from .db import Database
from .embed import make_embedder
from .graph import TurnState, run_turn
from .llm import ChatBackend, HttpChatBackend, MockBackend
from .memory import DialogueIndex, MemoryStore
from .ragindex import IndexStore
from .tools.builtins import FixtureTransport
from .tools.registry import ToolContext
from .tools.tables import TableRegistry
from .trace import SessionNotFoundError, TraceHub, export_bundle


@dataclass
class SessionDescriptor:
    session_id: str
    created_at_ms: int
    project: str
    turn_count: int

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at_ms": self.created_at_ms,
            "project": self.project,
            "turn_count": self.turn_count,
        }


@dataclass
class TurnResult:
    turn_id: int
    final_answer: str
    evaluator: Optional[dict]
    event_count: int

    def to_dict(self) -> dict:
        return {
            "turn_id": self.turn_id,
            "final_answer": self.final_answer,
            "evaluator": self.evaluator,
            "event_count": self.event_count,
        }


class Runtime:
    def __init__(self, config: MergedConfig):
        self.config = config
        self.params = config.params
        self.db = Database(config.db_path)
        self.hub = TraceHub(self.db)
        self.memory = MemoryStore(self.db)
        self.embedder = make_embedder(config.params.embedding_backend_id)
        self.dialogue = DialogueIndex(self.db, self.embedder)
        self.index_store = IndexStore(config.index_dir, dim=self.embedder.dim)
        self.registry = config.registry
        self.helpers = config.helpers
        self.prompts = config.prompts
        self.graph = config.graph
        fixtures = config.project_dir / "fixtures"
        self.literature_transport = FixtureTransport(fixtures) if fixtures.is_dir() else None
        self._backends: dict[str, ChatBackend] = {}
        self._tables: dict[str, TableRegistry] = {}
        self._turn_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._registry_lock = threading.Lock()

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "Runtime":
        path = Path(manifest_path)
        manifest = load_manifest(path)
        config = bootstrap(manifest, path.parent)
        return cls(config)

    def close(self) -> None:
        self.db.close()

    # -- wiring ---------------------------------------------------------------

    def config_pins(self) -> dict:
        p = self.params
        return {
            "model_id": p.model_id,
            "embedding_backend_id": p.embedding_backend_id,
            "embedding_dim": self.embedder.dim,
            "retrieval": {
                "rag_k": p.rag_k,
                "dialogue_k": p.dialogue_k,
                "chunk_chars": p.chunk_chars,
                "overlap_chars": p.overlap_chars,
            },
            "evaluator": {
                "enabled": p.evaluator_enabled,
                "avg_threshold": p.evaluator_avg_threshold,
                "single_threshold": p.evaluator_single_threshold,
            },
            "max_iterations": p.max_iterations,
            "max_tool_calls": p.max_tool_calls,
            "core_version": CORE_VERSION,
            "fingerprint": self.config.fingerprint,
            "init_trace": self.config.init_trace,
        }

    def backend_for(self, session_id: str) -> ChatBackend:
        with self._registry_lock:
            backend = self._backends.get(session_id)
            if backend is None:
                if self.params.model_id == "mock":
                    # No script configured: an empty script, whose exhaustion
                    # surfaces as a clean per-turn error instead of a crash.
                    if self.params.mock_script:
                        backend = MockBackend.from_file(
                            str(self.config.project_dir / self.params.mock_script)
                        )
                    else:
                        backend = MockBackend([])
                else:
                    backend = HttpChatBackend(self.params.model_id)
                self._backends[session_id] = backend
            return backend

    def tracer_for(self, session_id: str, turn_id: int):
        def tracer(*, agent, phase, payload, latency_ms=None, parent_event_id=None):
            return self.hub.emit(
                session_id,
                turn_id=turn_id,
                agent=agent,
                phase=phase,
                payload=payload,
                latency_ms=latency_ms,
                parent_event_id=parent_event_id,
            )

        return tracer

    def agent_env(self, session_id: str, tracer) -> AgentEnv:
        return AgentEnv(
            backend=self.backend_for(session_id),
            prompts=self.prompts,
            model_id=self.params.model_id,
            tracer=tracer,
        )

    def tables_for(self, session_id: str) -> TableRegistry:
        with self._registry_lock:
            return self._tables.setdefault(session_id, TableRegistry())

    def tool_context(self, session_id: str, turn_id: int, tracer) -> ToolContext:
        return ToolContext(
            session_id=session_id,
            turn_id=turn_id,
            tracer=tracer,
            index_store=self.index_store,
            embedder=self.embedder,
            rag_k=self.params.rag_k,
            tables=self.tables_for(session_id),
            on_demand_paths=self.config.on_demand_paths,
            literature_transport=self.literature_transport,
            project_dir=self.config.project_dir,
        )

    # -- session operations -----------------------------------------------------

    def create_session(self, session_id: Optional[str] = None) -> SessionDescriptor:
        session_id = session_id or uuid.uuid4().hex
        if self.hub.session_exists(session_id):
            raise ValueError(f"session {session_id!r} already exists")
        self.hub.create_session(session_id, self.config_pins())
        return self.session_descriptor(session_id)

    def session_descriptor(self, session_id: str) -> SessionDescriptor:
        rows = self.db.read(
            "SELECT created_at_ms, turn_count FROM sessions WHERE session_id=?",
            (session_id,),
        )
        if not rows:
            raise SessionNotFoundError(session_id)
        created_at_ms, turn_count = rows[0]
        return SessionDescriptor(
            session_id=session_id,
            created_at_ms=created_at_ms,
            project=self.config.manifest.display_name,
            turn_count=turn_count,
        )

    def post_message(self, session_id: str, text: str) -> TurnResult:
        """Run one turn synchronously; turns within a session are serialized."""
        if not self.hub.session_exists(session_id):
            raise SessionNotFoundError(session_id)
        with self._turn_locks[session_id]:
            turn_id = self.session_descriptor(session_id).turn_count + 1
            state = TurnState(session_id=session_id, turn_id=turn_id, user_message=text)
            try:
                run_turn(self.graph, state, self)
            except Exception as exc:
                # run_turn degrades node failures itself; this guards turn
                # setup (backend/script wiring) so the gateway never 500s.
                state.error = f"{type(exc).__name__}: {exc}"
                if state.final_answer is None:
                    state.final_answer = (
                        f"The assistant could not complete this turn: {state.error}"
                    )
                self.hub.emit(
                    session_id,
                    turn_id=turn_id,
                    agent="system",
                    phase="error",
                    payload={"message": state.error, "where": "turn setup"},
                )
            self.db.write(
                "UPDATE sessions SET turn_count=? WHERE session_id=?",
                (turn_id, session_id),
            )
        evaluator = None
        if state.evaluator_report is not None:
            report = state.evaluator_report
            evaluator = {
                "passed": report.passed,
                "avg_severity": report.avg_severity,
                "max_severity": report.max_severity,
            }
        return TurnResult(
            turn_id=turn_id,
            final_answer=state.final_answer or "",
            evaluator=evaluator,
            event_count=self.hub.turn_event_count(session_id, turn_id),
        )

    def export(self, session_id: str, format: str = "json") -> str:
        return export_bundle(self.hub, session_id, format)
