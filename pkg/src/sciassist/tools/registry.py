"""Schema-defined tool registry, argument validation, and provenance envelopes.

Every invocation goes through validate -> handler -> envelope and emits
exactly one tool_call trace event carrying hashed inputs and outputs.
Handler failures become error envelopes, never crashes.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..trace import hash_json

PARAM_TYPES = frozenset({"string", "integer", "number", "boolean", "array", "object"})

_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class ToolRegistrationError(Exception):
    pass


class ToolValidationError(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class PolicyError(Exception):
    """The invocation is outside the deployment's data boundary."""


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str
    required: bool = False
    description: str = ""
    default: Any = None
    choices: Optional[tuple] = None


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    params: tuple[ToolParam, ...]
    returns: str = ""

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ToolRegistrationError(
                f"tool name must be lowercase/underscores: {self.name!r}"
            )
        for p in self.params:
            if p.type not in PARAM_TYPES:
                raise ToolRegistrationError(
                    f"param {p.name!r} of {self.name!r} has unknown type {p.type!r}"
                )

    def to_function_schema(self) -> dict:
        """Function-calling convention document for interoperability."""
        properties = {}
        for p in self.params:
            prop: dict[str, Any] = {"type": p.type, "description": p.description}
            if p.choices is not None:
                prop["enum"] = list(p.choices)
            properties[p.name] = prop
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": [p.name for p in self.params if p.required],
            },
        }


@dataclass
class ToolEnvelope:
    status: str  # ok | error
    result: Any = None
    error_message: Optional[str] = None
    latency_ms: int = 0
    source_ids: list[str] = field(default_factory=list)
    retriable: bool = False

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "result": self.result,
            "error_message": self.error_message,
            "latency_ms": self.latency_ms,
            "source_ids": self.source_ids,
            "retriable": self.retriable,
        }


@dataclass
class ToolResult:
    """What handlers return; invoke() wraps it into an envelope."""

    result: Any
    source_ids: list[str] = field(default_factory=list)
    # Optional retrieval context for the exported bundle manifest:
    # entries of {chunk_id, index_name, similarity_rank}.
    context: list[dict] = field(default_factory=list)


Handler = Callable[[dict, "ToolContext"], ToolResult]


@dataclass
class ToolContext:
    """Per-invocation surface handed to handlers."""

    session_id: str = ""
    turn_id: int = 1
    tracer: Optional[Callable[..., Any]] = None
    parent_event_id: Optional[str] = None
    index_store: Any = None
    embedder: Any = None
    rag_k: int = 5
    tables: Any = None
    on_demand_paths: frozenset[str] = frozenset()
    literature_transport: Any = None
    project_dir: Any = None


class ToolRegistry:
    def __init__(self):
        self._tools: dict[str, tuple[ToolSchema, Handler, str]] = {}

    def register(self, schema: ToolSchema, handler: Handler, origin: str = "core") -> None:
        existing = self._tools.get(schema.name)
        if existing is not None:
            raise ToolRegistrationError(
                f"tool name conflict: {schema.name!r} already registered by "
                f"{existing[2]!r}, rejected from {origin!r}"
            )
        self._tools[schema.name] = (schema, handler, origin)

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def get(self, name: str) -> tuple[ToolSchema, Handler, str]:
        return self._tools[name]

    def schemas(self) -> list[ToolSchema]:
        """Stable-sorted by name for deterministic capability prompts."""
        return [self._tools[name][0] for name in sorted(self._tools)]

    def names(self) -> list[str]:
        return sorted(self._tools)

    def copy(self) -> "ToolRegistry":
        clone = ToolRegistry()
        clone._tools = dict(self._tools)
        return clone


def validate_args(schema: ToolSchema, args: dict) -> dict:
    """Normalize arguments against the schema, collecting all violations."""
    violations: list[str] = []
    known = {p.name: p for p in schema.params}
    for name in args:
        if name not in known:
            violations.append(f"unknown param {name!r}")
    normalized: dict[str, Any] = {}
    for p in schema.params:
        if p.name not in args:
            if p.required:
                violations.append(f"missing required param {p.name!r}")
            elif p.default is not None:
                normalized[p.name] = p.default
            continue
        value = args[p.name]
        coerced, error = _coerce(p, value)
        if error:
            violations.append(error)
        else:
            normalized[p.name] = coerced
    if violations:
        raise ToolValidationError(violations)
    return normalized


def _coerce(p: ToolParam, value: Any) -> tuple[Any, Optional[str]]:
    mismatch = (None, f"param {p.name!r} expected {p.type}, got {type(value).__name__}")
    if p.type == "string":
        if not isinstance(value, str):
            return mismatch
    elif p.type == "integer":
        if isinstance(value, bool):
            return mismatch
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        elif not isinstance(value, int):
            return mismatch
    elif p.type == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return mismatch
        value = float(value)
    elif p.type == "boolean":
        if not isinstance(value, bool):
            return mismatch
    elif p.type == "array":
        if not isinstance(value, list):
            return mismatch
    elif p.type == "object":
        if not isinstance(value, dict):
            return mismatch
    if p.choices is not None and value not in p.choices:
        return (None, f"param {p.name!r} must be one of {list(p.choices)}")
    return value, None


def invoke(registry: ToolRegistry, name: str, args: dict, ctx: ToolContext) -> ToolEnvelope:
    """Validate, execute, wrap, and trace one tool invocation."""
    started = time.monotonic()
    normalized = dict(args)
    context_refs: list[dict] = []
    if name not in registry:
        envelope = ToolEnvelope(status="error", error_message=f"unknown tool: {name!r}")
    else:
        schema, handler, _origin = registry.get(name)
        try:
            normalized = validate_args(schema, args)
            outcome = handler(normalized, ctx)
            envelope = ToolEnvelope(
                status="ok", result=outcome.result, source_ids=list(outcome.source_ids)
            )
            context_refs = outcome.context
        except ToolValidationError as exc:
            envelope = ToolEnvelope(status="error", error_message=f"invalid arguments: {exc}")
        except PolicyError as exc:
            envelope = ToolEnvelope(status="error", error_message=f"policy violation: {exc}")
        except Exception as exc:  # handler bugs become envelopes, never crashes
            retriable = getattr(exc, "retriable", False)
            envelope = ToolEnvelope(
                status="error", error_message=f"{type(exc).__name__}: {exc}",
                retriable=retriable,
            )
    envelope.latency_ms = int((time.monotonic() - started) * 1000)
    if ctx.tracer is not None:
        payload = {
            "tool": name,
            "args": normalized,
            "args_hash": hash_json(normalized),
            "result_hash": hash_json(
                envelope.result if envelope.status == "ok" else envelope.error_message
            ),
            "status": envelope.status,
            "source_ids": envelope.source_ids,
        }
        if envelope.error_message:
            payload["error"] = envelope.error_message
        if context_refs:
            payload["context"] = context_refs
        ctx.tracer(
            agent="tool",
            phase="tool_call",
            payload=payload,
            latency_ms=envelope.latency_ms,
            parent_event_id=ctx.parent_event_id,
        )
    return envelope


def list_capabilities(registry: ToolRegistry, helper_registry: dict) -> list[dict]:
    """Unified tool + helper namespace, stable-sorted by name."""
    capabilities = [
        {"kind": "tool", "name": s.name, "description": s.description,
         "parameters": s.to_function_schema()["parameters"]}
        for s in registry.schemas()
    ]
    capabilities.extend(
        {"kind": "helper", "name": name, "description": helper.description}
        for name, helper in helper_registry.items()
    )
    capabilities.sort(key=lambda c: c["name"])
    return capabilities
