"""Built-in tool suite: local semantic retrieval, literature search, tables.

Handlers are thin: they pull what they need from the ToolContext and
return ToolResults; invoke() owns validation, envelopes, and tracing.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..ragindex import catalog_kind
from .registry import (
    PolicyError,
    ToolContext,
    ToolParam,
    ToolRegistry,
    ToolResult,
    ToolSchema,
)

EXCERPT_CHARS = 500

LITERATURE_SOURCES = ("arxiv", "pubmed")


class TransportError(Exception):
    retriable = True


class FixtureTransport:
    """Reads recorded literature responses from JSON files, one per source."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def __call__(self, source: str, query: str) -> list[dict]:
        path = self.directory / f"{source}.json"
        if not path.exists():
            raise TransportError(f"no recorded fixture for source {source!r}")
        try:
            doc = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise TransportError(f"fixture for {source!r} is not valid JSON: {exc}")
        return doc["results"] if isinstance(doc, dict) else doc


def rag_query_handler(args: dict, ctx: ToolContext) -> ToolResult:
    if ctx.index_store is None or ctx.embedder is None:
        raise RuntimeError("retrieval index is not initialized")
    k = args.get("k", ctx.rag_k)
    query_vec = ctx.embedder.embed_text(args["query"])
    hits = ctx.index_store.query(query_vec, k)
    rows = []
    context = []
    for rank, (chunk_id, score, source_path) in enumerate(hits, start=1):
        chunk = ctx.index_store.chunks[chunk_id]
        rows.append(
            {
                "chunk_id": chunk_id,
                "source_path": source_path,
                "score": score,
                "excerpt": chunk.text[:EXCERPT_CHARS],
            }
        )
        context.append(
            {
                "chunk_id": chunk_id,
                "index_name": ctx.index_store.index.index_name,
                "similarity_rank": rank,
            }
        )
    return ToolResult(
        result={"matches": rows},
        source_ids=[row["chunk_id"] for row in rows],
        context=context,
    )


def literature_search_handler(args: dict, ctx: ToolContext) -> ToolResult:
    if ctx.literature_transport is None:
        raise TransportError("no literature transport configured")
    raw = ctx.literature_transport(args["source"], args["query"])
    records = []
    for entry in raw:
        try:
            records.append(
                {
                    "title": entry["title"],
                    "authors": list(entry["authors"]),
                    "year": int(entry["year"]),
                    "identifier": entry["identifier"],
                    "abstract": entry["abstract"],
                }
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed literature record: {exc}")
    return ToolResult(
        result={"records": records},
        source_ids=[r["identifier"] for r in records],
    )


def _resolve_on_demand(args_path: str, ctx: ToolContext) -> Path:
    if args_path not in ctx.on_demand_paths:
        raise PolicyError(f"path {args_path!r} is not in the on-demand catalog")
    base = getattr(ctx, "project_dir", None)
    candidate = Path(args_path)
    if not candidate.is_absolute() and base is not None:
        candidate = Path(base) / candidate
    return candidate


def table_load_handler(args: dict, ctx: ToolContext) -> ToolResult:
    path = _resolve_on_demand(args["path"], ctx)
    if catalog_kind(path) != "csv":
        raise RuntimeError(
            f"unsupported tabular format {path.suffix!r}: only CSV/TSV can be loaded"
        )
    handle = ctx.tables.load(path, args["path"])
    return ToolResult(result=handle.to_dict(), source_ids=[args["path"]])


def table_preview_handler(args: dict, ctx: ToolContext) -> ToolResult:
    handle = ctx.tables.get(args["table_id"])
    if handle is None:
        raise RuntimeError(f"unknown table_id: {args['table_id']!r}")
    rows = ctx.tables.preview(args["table_id"], args.get("n", 5))
    return ToolResult(result={"rows": rows}, source_ids=[handle.source_path])


def table_describe_handler(args: dict, ctx: ToolContext) -> ToolResult:
    handle = ctx.tables.get(args["table_id"])
    if handle is None:
        raise RuntimeError(f"unknown table_id: {args['table_id']!r}")
    stats = ctx.tables.describe(args["table_id"])
    return ToolResult(result={"columns": stats}, source_ids=[handle.source_path])


def core_registry() -> ToolRegistry:
    """The stock tool registry every deployment starts from."""
    registry = ToolRegistry()
    registry.register(
        ToolSchema(
            name="rag_query",
            description="Semantic search over the project's embedded document corpus.",
            params=(
                ToolParam("query", "string", required=True, description="Search text"),
                ToolParam("k", "integer", default=5, description="Number of results"),
            ),
            returns="Ranked chunk excerpts with source paths and scores.",
        ),
        rag_query_handler,
    )
    registry.register(
        ToolSchema(
            name="literature_search",
            description="Structured metadata search against a literature source.",
            params=(
                ToolParam("query", "string", required=True, description="Search text"),
                ToolParam(
                    "source",
                    "string",
                    required=True,
                    description="Which literature source to query",
                    choices=LITERATURE_SOURCES,
                ),
            ),
            returns="List of {title, authors, year, identifier, abstract}.",
        ),
        literature_search_handler,
    )
    registry.register(
        ToolSchema(
            name="table_load",
            description="Load a catalogued tabular file into the session registry.",
            params=(
                ToolParam("path", "string", required=True,
                          description="Catalog path of the file"),
            ),
            returns="A table handle with row count, columns, and header levels.",
        ),
        table_load_handler,
    )
    registry.register(
        ToolSchema(
            name="table_preview",
            description="First rows of a loaded table.",
            params=(
                ToolParam("table_id", "string", required=True),
                ToolParam("n", "integer", default=5, description="Row count"),
            ),
            returns="Rows as column/value records.",
        ),
        table_preview_handler,
    )
    registry.register(
        ToolSchema(
            name="table_describe",
            description="Per-column summary statistics for a loaded table.",
            params=(ToolParam("table_id", "string", required=True),),
            returns="count/min/max/mean for numeric columns, distinct counts for text.",
        ),
        table_describe_handler,
    )
    return registry
