"""Embedded sqlite store shared by the event log, message history, and dialogue index.

Single serialized writer, unlimited concurrent readers (WAL mode), and a
schema version stamp checked on open so mismatched layouts are refused
instead of silently misread.
"""

from __future__ import annotations

import sqlite3
import threading
from pathlib import Path

SCHEMA_VERSION = "1"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    created_at_ms INTEGER NOT NULL,
    turn_count INTEGER NOT NULL DEFAULT 0,
    config_pins TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS messages (
    rowid INTEGER PRIMARY KEY AUTOINCREMENT,
    session_id TEXT NOT NULL,
    turn INTEGER NOT NULL,
    role TEXT NOT NULL,
    content TEXT NOT NULL,
    metadata TEXT NOT NULL,
    timestamp_ms INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_messages_session ON messages (session_id, rowid);
CREATE TABLE IF NOT EXISTS dialogue_pairs (
    pair_id INTEGER PRIMARY KEY AUTOINCREMENT,
    session_id TEXT NOT NULL,
    turn INTEGER NOT NULL,
    question TEXT NOT NULL,
    answer TEXT NOT NULL,
    embedding BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS trace_events (
    session_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    event TEXT NOT NULL,
    PRIMARY KEY (session_id, seq)
);
"""


class SchemaVersionError(Exception):
    """The on-disk store was written by an incompatible schema version."""


class Database:
    """One writer connection behind a lock; fresh read connections per query."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        self._check_version()

    def _check_version(self) -> None:
        with self._lock:
            row = self._conn.execute(
                "SELECT value FROM meta WHERE key='schema_version'"
            ).fetchone()
            if row is None:
                self._conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                    (SCHEMA_VERSION,),
                )
                self._conn.commit()
            elif row[0] != SCHEMA_VERSION:
                raise SchemaVersionError(
                    f"store at {self.path} has schema version {row[0]}, "
                    f"this build requires {SCHEMA_VERSION}"
                )

    def write(self, sql: str, params: tuple = ()) -> int:
        """Execute one write statement; returns lastrowid."""
        with self._lock:
            cur = self._conn.execute(sql, params)
            self._conn.commit()
            return cur.lastrowid

    def read(self, sql: str, params: tuple = ()) -> list[tuple]:
        """Snapshot read on a throwaway connection (safe during writes)."""
        conn = sqlite3.connect(self.path, check_same_thread=False)
        try:
            return conn.execute(sql, params).fetchall()
        finally:
            conn.close()

    def close(self) -> None:
        with self._lock:
            self._conn.close()
