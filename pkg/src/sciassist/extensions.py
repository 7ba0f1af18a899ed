"""Compiled-in extension points that project descriptors may reference.

Projects extend the system declaratively: tool descriptors name a handler
from EXTENSION_HANDLERS, graph descriptors name a builder from
GRAPH_BUILDERS. No project code is ever imported or executed.
"""

from __future__ import annotations

from .graph import Edge, StateGraph, TurnState
from .tools.registry import ToolContext, ToolResult


def echo_handler(args: dict, ctx: ToolContext) -> ToolResult:
    """Returns its arguments unchanged; useful for wiring and tests."""
    return ToolResult(result={"echo": args})


def word_count_handler(args: dict, ctx: ToolContext) -> ToolResult:
    text = args.get("text", "")
    return ToolResult(result={"words": len(text.split()), "chars": len(text)})


EXTENSION_HANDLERS = {
    "echo": echo_handler,
    "word_count": word_count_handler,
}


def identity_builder(graph: StateGraph) -> StateGraph:
    return graph


def post_synthesis_note_builder(graph: StateGraph) -> StateGraph:
    """Insert a pass-through review node between synthesis and its successor."""

    def note_node(state: TurnState, handle) -> None:
        pass

    graph.nodes["project_note"] = note_node
    for edge in graph.edges:
        if edge.source == "synthesis":
            graph.edges.append(Edge("project_note", edge.target, label=edge.label,
                                    condition=edge.condition))
            edge.target = "project_note"
            edge.label = ""
            edge.condition = None
            break
    return graph


GRAPH_BUILDERS = {
    "identity": identity_builder,
    "post_synthesis_note": post_synthesis_note_builder,
}
