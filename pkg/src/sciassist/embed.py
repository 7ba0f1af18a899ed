"""Embedding backends and the vector math shared by both vector indices.

Embeddings are unit-norm float64 numpy vectors; the all-zero vector is
reserved as the sentinel for empty text. The default backend is a
deterministic hashed bag-of-words embedder so every retrieval path can be
exercised offline and checked against brute-force oracles.
"""

from __future__ import annotations

import hashlib
import re
from typing import Callable, Sequence

import numpy as np

DEFAULT_DIM = 64

_TOKEN_RE = re.compile(r"[0-9a-z]+")


class EmbeddingBackendError(Exception):
    """Transport or backend failure. Never maps to a zero vector."""


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit (or zero-sentinel) vectors."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


class EmbeddingBackend:
    """Contract: a fixed backend_id always maps the same text to the same vector."""

    backend_id: str
    dim: int

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed_text(t) for t in texts]


class HashEmbedder(EmbeddingBackend):
    """Deterministic offline embedder.

    Lowercases, tokenizes on non-alphanumerics, hashes each token into one
    of ``dim`` buckets, counts, and L2-normalizes. Empty or token-free text
    yields the all-zero sentinel.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.backend_id = f"hash-{dim}"
        self._buckets: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        idx = self._buckets.get(token)
        if idx is None:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:8], "big") % self.dim
            self._buckets[token] = idx
        return idx

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            vec[self._bucket(token)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return vec
        return vec / norm


class HttpEmbedder(EmbeddingBackend):
    """Remote backend speaking the same contract over an HTTP-style transport.

    ``transport(texts) -> list of vectors`` is injectable so tests never
    need a network; failures raise EmbeddingBackendError.
    """

    def __init__(
        self,
        backend_id: str,
        dim: int,
        transport: Callable[[Sequence[str]], Sequence[Sequence[float]]],
    ):
        self.backend_id = backend_id
        self.dim = dim
        self._transport = transport

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        try:
            raw = self._transport(texts)
        except Exception as exc:
            raise EmbeddingBackendError(f"embedding transport failed: {exc}") from exc
        out = []
        for values in raw:
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise EmbeddingBackendError(
                    f"backend returned dimension {vec.shape}, expected ({self.dim},)"
                )
            out.append(vec)
        if len(out) != len(texts):
            raise EmbeddingBackendError("backend returned wrong number of vectors")
        return out

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def http_embedding_transport(endpoint: str) -> Callable[[Sequence[str]], list]:
    """POST {"texts": [...]} -> {"vectors": [[...], ...]} against ``endpoint``."""

    def transport(texts: Sequence[str]) -> list:
        import httpx

        response = httpx.post(endpoint, json={"texts": list(texts)}, timeout=60.0)
        response.raise_for_status()
        return response.json()["vectors"]

    return transport


def make_embedder(backend_id: str) -> EmbeddingBackend:
    """Resolve a backend id from config.

    ``hash-<dim>`` is the offline embedder; ``http-<dim>:<endpoint>`` is a
    remote backend speaking the batch embedding wire format.
    """
    if backend_id.startswith("hash-"):
        return HashEmbedder(dim=int(backend_id.split("-", 1)[1]))
    if backend_id.startswith("http-"):
        spec, _, endpoint = backend_id.partition(":")
        if not endpoint:
            raise EmbeddingBackendError(
                f"remote backend id needs an endpoint: {backend_id!r}"
            )
        dim = int(spec.split("-", 1)[1])
        return HttpEmbedder(backend_id, dim, http_embedding_transport(endpoint))
    raise EmbeddingBackendError(f"unknown embedding backend: {backend_id!r}")
