"""Incremental document indexing: hash manifest, chunking, flat vector index.

Files are chunked with fixed-width overlapping windows and embedded once;
the manifest records each file's SHA-256 so later scans skip unchanged
content (mtime/size are only a fast pre-check, the hash is authoritative).
A separate catalog tracks on-demand tabular files that are discoverable
but never embedded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from filelock import FileLock

from .embed import EmbeddingBackend

logger = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = "1"

DEFAULT_CHUNK_CHARS = 1000
DEFAULT_OVERLAP_CHARS = 200

SPREADSHEET_EXTENSIONS = {".xlsx", ".xls", ".ods"}


class IndexConfigError(Exception):
    pass


@dataclass
class ChunkInterval:
    start: int
    end: int


@dataclass
class Chunk:
    chunk_id: str
    source_path: str
    char_start: int
    char_end: int
    text: str


@dataclass
class ManifestEntry:
    path: str
    sha256: str
    size_bytes: int
    mtime_ms: int
    chunk_count: int
    chunk_ids: list[str]

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "sha256": self.sha256,
            "size_bytes": self.size_bytes,
            "mtime_ms": self.mtime_ms,
            "chunk_count": self.chunk_count,
            "chunk_ids": self.chunk_ids,
        }


@dataclass
class OnDemandCatalogEntry:
    path: str
    kind: str  # csv | spreadsheet | other
    size_bytes: int
    mtime_ms: int

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "kind": self.kind,
            "size_bytes": self.size_bytes,
            "mtime_ms": self.mtime_ms,
        }


@dataclass
class IndexDelta:
    added: int = 0
    updated: int = 0
    skipped: int = 0
    removed: int = 0
    re_embedded_chunks: int = 0
    errors: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "added": self.added,
            "updated": self.updated,
            "skipped": self.skipped,
            "removed": self.removed,
            "re_embedded_chunks": self.re_embedded_chunks,
            "errors": self.errors,
        }


def chunk_document(text: str, chunk_chars: int, overlap_chars: int) -> list[ChunkInterval]:
    """Fixed-width windows starting at 0 with the configured overlap.

    Emission stops with the first chunk whose end reaches the document
    length; empty text produces no chunks.
    """
    if chunk_chars <= 0:
        raise IndexConfigError("chunk_chars must be positive")
    if overlap_chars < 0 or overlap_chars >= chunk_chars:
        raise IndexConfigError("overlap_chars must satisfy 0 <= overlap < chunk_chars")
    n = len(text)
    if n == 0:
        return []
    step = chunk_chars - overlap_chars
    intervals = []
    start = 0
    while True:
        end = min(start + chunk_chars, n)
        intervals.append(ChunkInterval(start, end))
        if end >= n:
            return intervals
        start += step


class FlatVectorIndex:
    """Exact (exhaustive-scan) cosine index over (chunk_id, vector) entries."""

    def __init__(self, index_name: str, dim: int):
        self.index_name = index_name
        self.dim = dim
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._vectors: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._ids)

    def chunk_ids(self) -> list[str]:
        return list(self._ids)

    def add(self, chunk_id: str, vector: np.ndarray) -> None:
        if vector.shape != (self.dim,):
            raise IndexConfigError(
                f"vector dimension {vector.shape} != index dimension ({self.dim},)"
            )
        if chunk_id in self._pos:
            raise IndexConfigError(f"duplicate chunk_id: {chunk_id}")
        self._pos[chunk_id] = len(self._ids)
        self._ids.append(chunk_id)
        self._vectors.append(np.asarray(vector, dtype=np.float64))
        self._matrix = None

    def remove(self, chunk_id: str) -> None:
        pos = self._pos.pop(chunk_id, None)
        if pos is None:
            return
        last = len(self._ids) - 1
        if pos != last:
            self._ids[pos] = self._ids[last]
            self._vectors[pos] = self._vectors[last]
            self._pos[self._ids[pos]] = pos
        self._ids.pop()
        self._vectors.pop()
        self._matrix = None

    def _ensure_matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self._vectors:
                self._matrix = np.vstack(self._vectors)
            else:
                self._matrix = np.zeros((0, self.dim), dtype=np.float64)
        return self._matrix

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, vectors) in a stable (sorted-by-id) order, for persistence."""
        ids = sorted(self._ids)
        if ids:
            vectors = np.vstack([self._vectors[self._pos[i]] for i in ids])
        else:
            vectors = np.zeros((0, self.dim), dtype=np.float64)
        return np.array(ids), vectors

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine; ties broken by ascending chunk_id."""
        if query.shape != (self.dim,):
            raise IndexConfigError(
                f"query dimension {query.shape} != index dimension ({self.dim},)"
            )
        if k < 0:
            raise IndexConfigError("k must be >= 0")
        if k == 0 or not self._ids:
            return []
        matrix = self._ensure_matrix()
        scores = matrix @ query
        ids = np.array(self._ids)
        order = np.lexsort((ids, -scores))[: min(k, len(ids))]
        return [(str(ids[i]), float(scores[i])) for i in order]

    def clone(self) -> "FlatVectorIndex":
        other = FlatVectorIndex(self.index_name, self.dim)
        other._ids = list(self._ids)
        other._pos = dict(self._pos)
        other._vectors = list(self._vectors)
        return other


class IndexStore:
    """The persistent RAG index: manifest + chunks + vectors on disk.

    All artifacts live in one directory and are replaced atomically after
    a successful scan, so crashes leave the previous snapshot intact.
    """

    def __init__(self, directory: str | Path, dim: int, index_name: str = "base"):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.directory / "rag_manifest.json"
        self.chunks_path = self.directory / "rag_chunks.json"
        self.vectors_path = self.directory / "rag_vectors.npz"
        self.index = FlatVectorIndex(index_name, dim)
        self.entries: dict[str, ManifestEntry] = {}
        self.chunks: dict[str, Chunk] = {}
        self._load()

    def _load(self) -> None:
        if self.manifest_path.exists():
            doc = json.loads(self.manifest_path.read_text("utf-8"))
            if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
                raise IndexConfigError(
                    f"manifest format {doc.get('format_version')!r} unsupported"
                )
            for path, raw in doc["entries"].items():
                self.entries[path] = ManifestEntry(
                    path=path,
                    sha256=raw["sha256"],
                    size_bytes=raw["size_bytes"],
                    mtime_ms=raw["mtime_ms"],
                    chunk_count=raw["chunk_count"],
                    chunk_ids=list(raw["chunk_ids"]),
                )
        if self.chunks_path.exists():
            for chunk_id, raw in json.loads(self.chunks_path.read_text("utf-8")).items():
                self.chunks[chunk_id] = Chunk(
                    chunk_id=chunk_id,
                    source_path=raw["source_path"],
                    char_start=raw["char_start"],
                    char_end=raw["char_end"],
                    text=raw["text"],
                )
        if self.vectors_path.exists():
            data = np.load(self.vectors_path, allow_pickle=False)
            for chunk_id, vector in zip(data["ids"], data["vectors"]):
                self.index.add(str(chunk_id), vector)

    def save(self) -> None:
        manifest_doc = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "entries": {p: e.to_dict() for p, e in sorted(self.entries.items())},
        }
        _atomic_write_text(
            self.manifest_path, json.dumps(manifest_doc, sort_keys=True, indent=2)
        )
        chunk_doc = {
            c.chunk_id: {
                "source_path": c.source_path,
                "char_start": c.char_start,
                "char_end": c.char_end,
                "text": c.text,
            }
            for c in self.chunks.values()
        }
        _atomic_write_text(self.chunks_path, json.dumps(chunk_doc, sort_keys=True))
        ids, vectors = self.index.to_arrays()
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".npz")
        os.close(fd)
        try:
            np.savez(tmp, ids=ids, vectors=vectors)
            os.replace(tmp, self.vectors_path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def query(self, query_embedding: np.ndarray, k: int) -> list[tuple[str, float, str]]:
        """(chunk_id, score, source_path) triples, best first."""
        hits = self.index.search(query_embedding, k)
        return [(cid, score, self.chunks[cid].source_path) for cid, score in hits]


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# -- text extraction ---------------------------------------------------------

Extractor = Callable[[Path], str]


def _read_text(path: Path) -> str:
    return path.read_text("utf-8", errors="replace")


# Plain text and markdown are native; anything else needs a registered
# extractor (tests plug a pass-through fixture extractor for e.g. .pdf).
DEFAULT_EXTRACTORS: dict[str, Extractor] = {
    ".txt": _read_text,
    ".md": _read_text,
}


@dataclass
class _ScanWorkspace:
    """Mutable copy of the store's state; committed only after a full scan,
    so concurrent queries keep seeing the pre-scan snapshot."""

    entries: dict[str, ManifestEntry]
    chunks: dict[str, Chunk]
    index: FlatVectorIndex

    @classmethod
    def from_store(cls, store: IndexStore) -> "_ScanWorkspace":
        entries = {
            path: ManifestEntry(
                path=e.path,
                sha256=e.sha256,
                size_bytes=e.size_bytes,
                mtime_ms=e.mtime_ms,
                chunk_count=e.chunk_count,
                chunk_ids=list(e.chunk_ids),
            )
            for path, e in store.entries.items()
        }
        return cls(entries=entries, chunks=dict(store.chunks), index=store.index.clone())


def scan_and_index(
    roots: list[str | Path],
    store: IndexStore,
    embedder: EmbeddingBackend,
    *,
    base_dir: str | Path | None = None,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
    extractors: dict[str, Extractor] | None = None,
) -> IndexDelta:
    """One incremental indexing pass over ``roots``.

    Unchanged files (by hash) are skipped, new files embedded, changed
    files re-embedded, and entries for deleted files dropped. The store is
    persisted atomically after the scan. Unreadable files are recorded in
    the delta and do not abort the scan.
    """
    extractors = extractors if extractors is not None else DEFAULT_EXTRACTORS
    delta = IndexDelta()
    lock = FileLock(str(store.manifest_path) + ".lock")
    with lock:
        work = _ScanWorkspace.from_store(store)
        seen: set[str] = set()
        for root in roots:
            root = Path(root)
            if not root.is_dir():
                raise IndexConfigError(f"rag source root does not exist: {root}")
            for file_path in sorted(p for p in root.rglob("*") if p.is_file()):
                ext = file_path.suffix.lower()
                if ext not in extractors:
                    continue
                rel = _normalize_path(file_path, base_dir)
                seen.add(rel)
                try:
                    _index_file(
                        file_path, rel, work, embedder, delta,
                        chunk_chars, overlap_chars, extractors[ext],
                    )
                except OSError as exc:
                    logger.warning("skipping unreadable file %s: %s", file_path, exc)
                    delta.errors.append({"path": rel, "error": str(exc)})
        for gone in sorted(set(work.entries) - seen):
            for chunk_id in work.entries[gone].chunk_ids:
                work.index.remove(chunk_id)
                work.chunks.pop(chunk_id, None)
            del work.entries[gone]
            delta.removed += 1
        store.entries = work.entries
        store.chunks = work.chunks
        store.index = work.index
        store.save()
    return delta


def _normalize_path(file_path: Path, base_dir: str | Path | None) -> str:
    resolved = file_path.resolve()
    if base_dir is not None:
        try:
            return resolved.relative_to(Path(base_dir).resolve()).as_posix()
        except ValueError:
            pass
    return resolved.as_posix()


def _index_file(
    file_path: Path,
    rel: str,
    work: _ScanWorkspace,
    embedder: EmbeddingBackend,
    delta: IndexDelta,
    chunk_chars: int,
    overlap_chars: int,
    extractor: Extractor,
) -> None:
    stat = file_path.stat()
    size = stat.st_size
    mtime_ms = int(stat.st_mtime * 1000)
    prior = work.entries.get(rel)

    # Fast pre-check: identical size+mtime means we trust the prior hash.
    if prior is not None and prior.size_bytes == size and prior.mtime_ms == mtime_ms:
        delta.skipped += 1
        return

    data = file_path.read_bytes()
    sha = hashlib.sha256(data).hexdigest()
    if prior is not None and prior.sha256 == sha:
        # Content unchanged (e.g. mtime-only touch): refresh stat fields only.
        prior.size_bytes = size
        prior.mtime_ms = mtime_ms
        delta.skipped += 1
        return

    if prior is not None:
        for chunk_id in prior.chunk_ids:
            work.index.remove(chunk_id)
            work.chunks.pop(chunk_id, None)

    text = extractor(file_path)
    intervals = chunk_document(text, chunk_chars, overlap_chars)
    texts = [text[iv.start : iv.end] for iv in intervals]
    vectors = embedder.embed_batch(texts)
    chunk_ids = []
    for i, (iv, chunk_text, vec) in enumerate(zip(intervals, texts, vectors)):
        chunk_id = f"{rel}:{sha[:12]}:{i:04d}"
        chunk_ids.append(chunk_id)
        work.chunks[chunk_id] = Chunk(chunk_id, rel, iv.start, iv.end, chunk_text)
        work.index.add(chunk_id, vec)
    work.entries[rel] = ManifestEntry(
        path=rel,
        sha256=sha,
        size_bytes=size,
        mtime_ms=mtime_ms,
        chunk_count=len(chunk_ids),
        chunk_ids=chunk_ids,
    )
    delta.re_embedded_chunks += len(chunk_ids)
    if prior is None:
        delta.added += 1
    else:
        delta.updated += 1


# -- on-demand catalog --------------------------------------------------------


def catalog_kind(path: Path) -> str:
    ext = path.suffix.lower()
    if ext in (".csv", ".tsv"):
        return "csv"
    if ext in SPREADSHEET_EXTENSIONS:
        return "spreadsheet"
    return "other"


def catalog_on_demand(
    roots: list[str | Path], *, base_dir: str | Path | None = None
) -> list[OnDemandCatalogEntry]:
    """Recursive catalog of on-demand files. Nothing here is ever embedded."""
    entries: list[OnDemandCatalogEntry] = []
    for root in roots:
        root = Path(root)
        if not root.is_dir():
            raise IndexConfigError(f"on-demand root does not exist: {root}")
        for file_path in sorted(p for p in root.rglob("*") if p.is_file()):
            stat = file_path.stat()
            entries.append(
                OnDemandCatalogEntry(
                    path=_normalize_path(file_path, base_dir),
                    kind=catalog_kind(file_path),
                    size_bytes=stat.st_size,
                    mtime_ms=int(stat.st_mtime * 1000),
                )
            )
    return entries


def save_on_demand_manifest(path: str | Path, entries: list[OnDemandCatalogEntry]) -> None:
    doc = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "entries": [e.to_dict() for e in entries],
    }
    _atomic_write_text(Path(path), json.dumps(doc, sort_keys=True, indent=2))


def load_on_demand_manifest(path: str | Path) -> list[OnDemandCatalogEntry]:
    p = Path(path)
    if not p.exists():
        return []
    doc = json.loads(p.read_text("utf-8"))
    return [
        OnDemandCatalogEntry(
            path=raw["path"],
            kind=raw["kind"],
            size_bytes=raw["size_bytes"],
            mtime_ms=raw["mtime_ms"],
        )
        for raw in doc["entries"]
    ]
