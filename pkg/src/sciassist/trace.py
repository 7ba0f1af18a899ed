"""Structured event emission, ordered per-session streams, and trace bundle export.

Every cognitive step in a session becomes a TraceEvent with a per-session
monotonic ``seq`` assigned by a single sequencer. Live subscribers receive
events in order; late subscribers replay from any point. Sessions export
as machine-readable JSON bundles (stable byte-for-byte) or Markdown
summaries.
"""

from __future__ import annotations

import hashlib
import json
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from .db import Database

BUNDLE_FORMAT_VERSION = "1"

AGENTS = frozenset(
    {"router", "planner", "coordinator", "researcher", "evaluator", "tool", "system"}
)

# Closed set of published agent/phase pairs. emit() rejects anything else.
AGENT_PHASES: frozenset[tuple[str, str]] = frozenset(
    {
        ("system", "turn_start"),
        ("system", "turn_end"),
        ("system", "transition"),
        ("system", "custom_node"),
        ("system", "error"),
        ("system", "warning"),
        ("router", "route"),
        ("router", "model_call"),
        ("planner", "plan"),
        ("planner", "plan_failure"),
        ("planner", "model_call"),
        ("coordinator", "subtask_start"),
        ("coordinator", "subtask_result"),
        ("coordinator", "subtask_failure"),
        ("coordinator", "synthesis"),
        ("coordinator", "model_call"),
        ("researcher", "helper_start"),
        ("researcher", "evidence"),
        ("researcher", "model_call"),
        ("evaluator", "evaluate"),
        ("evaluator", "model_call"),
        ("tool", "tool_call"),
    }
)

# Minimum payload keys per phase; extra keys are always allowed.
PHASE_REQUIRED_KEYS: dict[str, frozenset[str]] = {
    "turn_start": frozenset({"user_message"}),
    "turn_end": frozenset({"final_answer"}),
    "transition": frozenset({"from", "to"}),
    "custom_node": frozenset({"node"}),
    "error": frozenset({"message"}),
    "warning": frozenset({"message"}),
    "route": frozenset({"decision"}),
    "plan": frozenset({"plan"}),
    "plan_failure": frozenset({"error"}),
    "model_call": frozenset({"model_id"}),
    "subtask_start": frozenset({"subtask_id"}),
    "subtask_result": frozenset({"subtask_id"}),
    "subtask_failure": frozenset({"subtask_id"}),
    "synthesis": frozenset({"draft_answer"}),
    "helper_start": frozenset({"helper", "goal"}),
    "evidence": frozenset({"count"}),
    "evaluate": frozenset({"report"}),
    "tool_call": frozenset({"tool", "args_hash", "result_hash", "status"}),
}


class TraceSchemaError(Exception):
    """Event violates the published agent/phase set or its payload schema."""


class SessionNotFoundError(Exception):
    pass


def canonical_json(doc: Any) -> str:
    """Key-sorted, whitespace-free serialization. The portable hash input."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def hash_payload(data: bytes) -> str:
    """64-char lowercase hex SHA-256 digest."""
    return hashlib.sha256(data).hexdigest()


def hash_json(doc: Any) -> str:
    return hash_payload(canonical_json(doc).encode("utf-8"))


@dataclass
class TraceEvent:
    event_id: str
    session_id: str
    turn_id: int
    seq: int
    agent: str
    phase: str
    timestamp_ms: int
    payload: dict
    latency_ms: Optional[int] = None
    parent_event_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "session_id": self.session_id,
            "turn_id": self.turn_id,
            "seq": self.seq,
            "agent": self.agent,
            "phase": self.phase,
            "timestamp_ms": self.timestamp_ms,
            "latency_ms": self.latency_ms,
            "parent_event_id": self.parent_event_id,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TraceEvent":
        return cls(
            event_id=doc["event_id"],
            session_id=doc["session_id"],
            turn_id=doc["turn_id"],
            seq=doc["seq"],
            agent=doc["agent"],
            phase=doc["phase"],
            timestamp_ms=doc["timestamp_ms"],
            latency_ms=doc.get("latency_ms"),
            parent_event_id=doc.get("parent_event_id"),
            payload=doc.get("payload", {}),
        )


class Subscription:
    """Read-only ordered view of one session's events, live after backfill."""

    def __init__(self, backfill: list[TraceEvent], live: bool):
        self._queue: queue.Queue = queue.Queue()
        self._open = live
        for evt in backfill:
            self._queue.put(evt)

    def _push(self, evt: TraceEvent) -> None:
        if self._open:
            self._queue.put(evt)

    def close(self) -> None:
        self._open = False

    def next_event(self, timeout: float = 1.0) -> Optional[TraceEvent]:
        """Next event in seq order, or None when drained and closed/timed out."""
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def drain(self, count: int, timeout: float = 5.0) -> list[TraceEvent]:
        """Collect up to ``count`` events, stopping early on timeout."""
        out: list[TraceEvent] = []
        deadline = time.monotonic() + timeout
        while len(out) < count and time.monotonic() < deadline:
            evt = self.next_event(timeout=min(0.2, max(0.0, deadline - time.monotonic())))
            if evt is not None:
                out.append(evt)
        return out

    def __iter__(self) -> Iterator[TraceEvent]:
        """Yields queued events; ends once the stream is closed and drained."""
        while True:
            evt = self.next_event(timeout=0.2)
            if evt is not None:
                yield evt
            elif not self._open and self._queue.empty():
                return


@dataclass
class _SessionState:
    events: list[TraceEvent] = field(default_factory=list)
    event_ids: set = field(default_factory=set)
    subscribers: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class TraceHub:
    """Per-session sequencer, durable event log, and broadcast fan-out.

    Multiple producers may emit concurrently; the per-session lock
    serializes seq assignment. Export reads a snapshot and is safe
    concurrent with emission.
    """

    def __init__(self, db: Database):
        self._db = db
        self._sessions: dict[str, _SessionState] = {}
        self._registry_lock = threading.Lock()

    # -- session bookkeeping ------------------------------------------------

    def create_session(self, session_id: str, config_pins: dict) -> None:
        # A fresh session has zero events: config pins live in the sessions
        # table so a zero-turn export still carries them.
        self._db.write(
            "INSERT INTO sessions (session_id, created_at_ms, turn_count, config_pins)"
            " VALUES (?, ?, 0, ?)",
            (session_id, int(time.time() * 1000), canonical_json(config_pins)),
        )

    def session_exists(self, session_id: str) -> bool:
        if session_id in self._sessions:
            return True
        rows = self._db.read(
            "SELECT 1 FROM sessions WHERE session_id=?", (session_id,)
        )
        return bool(rows)

    def config_pins(self, session_id: str) -> dict:
        rows = self._db.read(
            "SELECT config_pins FROM sessions WHERE session_id=?", (session_id,)
        )
        if not rows:
            raise SessionNotFoundError(session_id)
        return json.loads(rows[0][0])

    def _state(self, session_id: str) -> _SessionState:
        with self._registry_lock:
            state = self._sessions.get(session_id)
            if state is None:
                state = _SessionState()
                for (raw,) in self._db.read(
                    "SELECT event FROM trace_events WHERE session_id=? ORDER BY seq",
                    (session_id,),
                ):
                    evt = TraceEvent.from_dict(json.loads(raw))
                    state.events.append(evt)
                    state.event_ids.add(evt.event_id)
                self._sessions[session_id] = state
            return state

    # -- core operations ----------------------------------------------------

    def emit(
        self,
        session_id: str,
        *,
        turn_id: int,
        agent: str,
        phase: str,
        payload: dict,
        parent_event_id: Optional[str] = None,
        latency_ms: Optional[int] = None,
    ) -> TraceEvent:
        """Record one event; assigns the next seq and fans out to subscribers."""
        if agent not in AGENTS or (agent, phase) not in AGENT_PHASES:
            raise TraceSchemaError(f"unpublished agent/phase pair: ({agent}, {phase})")
        if not isinstance(payload, dict):
            raise TraceSchemaError(f"payload must be a dict, got {type(payload).__name__}")
        missing = PHASE_REQUIRED_KEYS.get(phase, frozenset()) - payload.keys()
        if missing:
            raise TraceSchemaError(
                f"payload for phase {phase!r} missing keys: {sorted(missing)}"
            )
        if turn_id < 1:
            raise TraceSchemaError("turn_id must be >= 1")
        if latency_ms is not None and latency_ms < 0:
            raise TraceSchemaError("latency_ms must be non-negative")
        try:
            payload_json = canonical_json(payload)
        except (TypeError, ValueError) as exc:
            raise TraceSchemaError(f"payload not JSON-serializable: {exc}") from exc

        state = self._state(session_id)
        with state.lock:
            if parent_event_id is not None and parent_event_id not in state.event_ids:
                raise TraceSchemaError(
                    f"parent_event_id {parent_event_id!r} does not reference an "
                    "earlier event in this session"
                )
            seq = len(state.events) + 1
            evt = TraceEvent(
                event_id=f"{session_id}:{seq}",
                session_id=session_id,
                turn_id=turn_id,
                seq=seq,
                agent=agent,
                phase=phase,
                timestamp_ms=int(time.time() * 1000),
                latency_ms=latency_ms,
                parent_event_id=parent_event_id,
                payload=json.loads(payload_json),
            )
            self._db.write(
                "INSERT INTO trace_events (session_id, seq, event) VALUES (?, ?, ?)",
                (session_id, seq, json.dumps(evt.to_dict(), sort_keys=True)),
            )
            state.events.append(evt)
            state.event_ids.add(evt.event_id)
            state.subscribers = [s for s in state.subscribers if s._open]
            for sub in state.subscribers:
                sub._push(evt)
        return evt

    def events(self, session_id: str, from_seq: int = 0) -> list[TraceEvent]:
        """Snapshot of all events with seq > from_seq, in seq order."""
        if not self.session_exists(session_id):
            return []
        state = self._state(session_id)
        with state.lock:
            return [e for e in state.events if e.seq > from_seq]

    def subscribe(self, session_id: str, from_seq: int = 0) -> Subscription:
        """Ordered stream of events with seq > from_seq; live from now on.

        Unknown session: empty stream terminating immediately.
        """
        if not self.session_exists(session_id):
            return Subscription([], live=False)
        state = self._state(session_id)
        with state.lock:
            backfill = [e for e in state.events if e.seq > from_seq]
            sub = Subscription(backfill, live=True)
            state.subscribers.append(sub)
        return sub

    def turn_event_count(self, session_id: str, turn_id: int) -> int:
        return sum(1 for e in self.events(session_id) if e.turn_id == turn_id)


# -- bundle export ----------------------------------------------------------


def build_bundle(hub: TraceHub, session_id: str) -> dict:
    """Assemble the TraceBundle document for one session."""
    if not hub.session_exists(session_id):
        raise SessionNotFoundError(session_id)
    events = hub.events(session_id)
    nodes = []
    edges = []
    tool_logs = []
    context_manifest = []
    for evt in events:
        nodes.append(
            {
                "event_id": evt.event_id,
                "seq": evt.seq,
                "turn_id": evt.turn_id,
                "agent": evt.agent,
                "phase": evt.phase,
                "timestamp_ms": evt.timestamp_ms,
                "latency_ms": evt.latency_ms,
            }
        )
        if evt.parent_event_id is not None:
            edges.append([evt.parent_event_id, evt.event_id])
        if evt.phase == "tool_call":
            tool_logs.append(
                {
                    "tool": evt.payload["tool"],
                    "args_hash": evt.payload["args_hash"],
                    "result_hash": evt.payload["result_hash"],
                    "latency_ms": evt.latency_ms,
                    "status": evt.payload["status"],
                }
            )
        for ref in evt.payload.get("context", []):
            context_manifest.append(
                {
                    "chunk_id": ref["chunk_id"],
                    "index_name": ref["index_name"],
                    "similarity_rank": ref["similarity_rank"],
                }
            )
    return {
        "session_id": session_id,
        "nodes": nodes,
        "edges": edges,
        "tool_logs": tool_logs,
        "context_manifest": context_manifest,
        "config_pins": hub.config_pins(session_id),
        "format_version": BUNDLE_FORMAT_VERSION,
    }


def _markdown_line(evt: TraceEvent) -> list[str]:
    p = evt.payload
    lines: list[str] = []
    if evt.phase == "route":
        d = p["decision"]
        lines.append(f"- **route** ({evt.agent}): intent={d['intent']} route={d['route']}")
        if d.get("rationale"):
            lines.append(f"  - rationale: {d['rationale']}")
    elif evt.phase == "plan":
        plan = p["plan"]
        lines.append(f"- **plan** ({evt.agent}): {plan.get('goal_summary', '')}")
        for st in plan.get("subtasks", []):
            deps = ", ".join(st.get("depends_on", [])) or "none"
            lines.append(
                f"  - {st['subtask_id']}: {st['description']} (depends on: {deps})"
            )
    elif evt.phase == "tool_call":
        lines.append(
            f"- **tool call**: `{p['tool']}` status={p['status']}"
            f" args_hash={p['args_hash'][:12]} result_hash={p['result_hash'][:12]}"
        )
        for sid in p.get("source_ids", []):
            lines.append(f"  - source: {sid}")
    elif evt.phase == "synthesis":
        lines.append(f"- **synthesis**: {p['draft_answer']}")
    elif evt.phase == "evaluate":
        r = p["report"]
        verdict = "pass" if r["passed"] else "fail"
        lines.append(
            f"- **evaluator verdict**: {verdict}"
            f" (avg_severity={r['avg_severity']:.3f}, max_severity={r['max_severity']:.3f})"
        )
        for c in r.get("critiques", []):
            lines.append(f"  - [{c['severity']:.2f}] {c['text']}")
    elif evt.phase == "turn_start":
        lines.append(f"- **user**: {p['user_message']}")
    elif evt.phase == "turn_end":
        lines.append(f"- **final answer**: {p['final_answer']}")
    elif evt.phase in ("error", "warning", "plan_failure", "subtask_failure"):
        msg = p.get("message") or p.get("error", "")
        lines.append(f"- **{evt.phase}** ({evt.agent}): {msg}")
    return lines


def export_bundle(hub: TraceHub, session_id: str, format: str = "json") -> str:
    """Serialize a session trace. JSON round-trips byte-identically."""
    bundle = build_bundle(hub, session_id)
    if format == "json":
        return json.dumps(bundle, sort_keys=True, indent=2, ensure_ascii=False)
    if format == "markdown":
        lines = [f"# Session {session_id}", ""]
        turns = sorted({e.turn_id for e in hub.events(session_id)})
        for turn in turns:
            lines.append(f"## Turn {turn}")
            lines.append("")
            for evt in hub.events(session_id):
                if evt.turn_id == turn:
                    lines.extend(_markdown_line(evt))
            lines.append("")
        return "\n".join(lines)
    raise ValueError(f"unknown export format: {format!r}")
