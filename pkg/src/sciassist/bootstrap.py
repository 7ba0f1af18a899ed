"""Declarative project bootstrap: manifest loading, validation, the six-step
pipeline, and configuration fingerprinting.

A project manifest ("project.json") describes identity, data roots, three
extension toggles (all disabled by default), and runtime parameters. The
pipeline merges those declarations with the stable core into a runnable
configuration; any failure halts with a descriptive error so partial
deployments cannot exist.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from . import CORE_VERSION
from .agents import PromptTemplate, core_helpers, core_prompts
from .db import Database
from .embed import make_embedder
from .extensions import EXTENSION_HANDLERS, GRAPH_BUILDERS
from .graph import StateGraph, augment, build_core_graph
from .llm import HttpChatBackend
from .ragindex import (
    IndexStore,
    catalog_on_demand,
    save_on_demand_manifest,
    scan_and_index,
)
from .tools.builtins import core_registry
from .tools.registry import ToolParam, ToolRegistry, ToolSchema

PIPELINE_STEPS = (
    "load_manifest",
    "merge_tools",
    "overlay_prompts",
    "augment_graph",
    "init_memory_and_indices",
    "launch_config",
)

_TOP_LEVEL_KEYS = {
    "identity", "rag_sources", "on_demand_sources", "toggles", "extensions", "runtime",
}
_IDENTITY_KEYS = {"display_name", "category", "domain"}
_TOGGLE_KEYS = {"tools", "prompts", "graph"}
_EXTENSION_KEYS = {"tools_module", "prompts_dir", "graph_module"}
_RUNTIME_KEYS = {
    "model_id", "embedding_backend_id", "rag_k", "dialogue_k", "chunk_chars",
    "overlap_chars", "evaluator", "max_iterations", "max_tool_calls",
    "data_dir", "mock_script",
}
_EVALUATOR_KEYS = {"enabled", "avg_threshold", "single_threshold"}

ROLE_NAMES = ("router", "planner", "coordinator", "researcher", "evaluator")


class ManifestError(Exception):
    pass


class BootstrapError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RuntimeParams:
    model_id: str = "mock"
    embedding_backend_id: str = "hash-64"
    rag_k: int = 5
    dialogue_k: int = 3
    chunk_chars: int = 1000
    overlap_chars: int = 200
    evaluator_enabled: bool = False
    evaluator_avg_threshold: float = 0.5
    evaluator_single_threshold: float = 0.8
    max_iterations: int = 2
    max_tool_calls: int = 10
    data_dir: str = ".assistant"  # runtime state, distinct from project data roots
    mock_script: Optional[str] = None


@dataclass
class ProjectManifest:
    display_name: str
    category: str
    domain: str
    rag_sources: list[dict]
    on_demand_sources: list[str]
    toggles: dict
    extensions: dict
    params: RuntimeParams
    normalized: dict  # canonical manifest document (defaults applied)


@dataclass
class MergedConfig:
    project_dir: Path
    manifest: ProjectManifest
    registry: ToolRegistry
    helpers: dict
    prompt_templates: dict[str, PromptTemplate]
    prompts: dict[str, str]
    graph: StateGraph
    params: RuntimeParams
    db_path: Path
    index_dir: Path
    ondemand_manifest_path: Path
    rag_roots: list[Path]
    on_demand_roots: list[Path]
    on_demand_paths: frozenset
    init_trace: list[dict] = field(default_factory=list)
    fingerprint: str = ""


def _require_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ManifestError(
            f"unknown key(s) in {where}: {', '.join(sorted(repr(k) for k in unknown))}"
        )


def _typed(doc: dict, key: str, kind, default, where: str):
    value = doc.get(key, default)
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind in (int, float):
        ok = isinstance(value, kind if kind is int else (int, float)) and not isinstance(
            value, bool
        )
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ManifestError(f"{where}.{key} must be {kind.__name__}")
    return kind(value) if kind is float else value


def load_manifest(path: str | Path) -> ProjectManifest:
    """Parse and default-fill a project manifest; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    _require_keys(doc, _TOP_LEVEL_KEYS, "manifest")

    identity = doc.get("identity", {})
    _require_keys(identity, _IDENTITY_KEYS, "identity")
    display_name = _typed(identity, "display_name", str, "Assistant", "identity")

    rag_sources = doc.get("rag_sources", [])
    if not isinstance(rag_sources, list):
        raise ManifestError("rag_sources must be a list")
    for i, entry in enumerate(rag_sources):
        if not isinstance(entry, dict) or "path" not in entry:
            raise ManifestError(f"rag_sources[{i}] must be an object with a path")
        _require_keys(entry, {"path", "description"}, f"rag_sources[{i}]")

    on_demand = doc.get("on_demand_sources", [])
    if not isinstance(on_demand, list) or not all(isinstance(p, str) for p in on_demand):
        raise ManifestError("on_demand_sources must be a list of paths")

    toggles_doc = doc.get("toggles", {})
    _require_keys(toggles_doc, _TOGGLE_KEYS, "toggles")
    toggles = {k: _typed(toggles_doc, k, bool, False, "toggles") for k in sorted(_TOGGLE_KEYS)}

    extensions_doc = doc.get("extensions", {})
    _require_keys(extensions_doc, _EXTENSION_KEYS, "extensions")
    extensions = {k: extensions_doc.get(k) for k in sorted(_EXTENSION_KEYS)}

    runtime_doc = doc.get("runtime", {})
    _require_keys(runtime_doc, _RUNTIME_KEYS, "runtime")
    evaluator_doc = runtime_doc.get("evaluator", {})
    _require_keys(evaluator_doc, _EVALUATOR_KEYS, "runtime.evaluator")
    defaults = RuntimeParams()
    params = RuntimeParams(
        model_id=_typed(runtime_doc, "model_id", str, defaults.model_id, "runtime"),
        embedding_backend_id=_typed(
            runtime_doc, "embedding_backend_id", str, defaults.embedding_backend_id,
            "runtime",
        ),
        rag_k=_typed(runtime_doc, "rag_k", int, defaults.rag_k, "runtime"),
        dialogue_k=_typed(runtime_doc, "dialogue_k", int, defaults.dialogue_k, "runtime"),
        chunk_chars=_typed(runtime_doc, "chunk_chars", int, defaults.chunk_chars, "runtime"),
        overlap_chars=_typed(
            runtime_doc, "overlap_chars", int, defaults.overlap_chars, "runtime"
        ),
        evaluator_enabled=_typed(
            evaluator_doc, "enabled", bool, defaults.evaluator_enabled, "evaluator"
        ),
        evaluator_avg_threshold=_typed(
            evaluator_doc, "avg_threshold", float, defaults.evaluator_avg_threshold,
            "evaluator",
        ),
        evaluator_single_threshold=_typed(
            evaluator_doc, "single_threshold", float,
            defaults.evaluator_single_threshold, "evaluator",
        ),
        max_iterations=_typed(
            runtime_doc, "max_iterations", int, defaults.max_iterations, "runtime"
        ),
        max_tool_calls=_typed(
            runtime_doc, "max_tool_calls", int, defaults.max_tool_calls, "runtime"
        ),
        data_dir=_typed(runtime_doc, "data_dir", str, defaults.data_dir, "runtime"),
        mock_script=runtime_doc.get("mock_script"),
    )

    # A true toggle requires its corresponding extension entry.
    pairings = {
        "tools": "tools_module",
        "prompts": "prompts_dir",
        "graph": "graph_module",
    }
    for toggle, ext_key in pairings.items():
        if toggles[toggle] and not extensions.get(ext_key):
            raise ManifestError(
                f"toggle {toggle!r} is enabled but extensions.{ext_key} is not set"
            )

    normalized = {
        "identity": {
            "display_name": display_name,
            "category": identity.get("category", ""),
            "domain": identity.get("domain", ""),
        },
        "rag_sources": [
            {"path": e["path"], "description": e.get("description", "")}
            for e in rag_sources
        ],
        "on_demand_sources": list(on_demand),
        "toggles": toggles,
        "extensions": extensions,
        "runtime": {
            "model_id": params.model_id,
            "embedding_backend_id": params.embedding_backend_id,
            "rag_k": params.rag_k,
            "dialogue_k": params.dialogue_k,
            "chunk_chars": params.chunk_chars,
            "overlap_chars": params.overlap_chars,
            "evaluator": {
                "enabled": params.evaluator_enabled,
                "avg_threshold": params.evaluator_avg_threshold,
                "single_threshold": params.evaluator_single_threshold,
            },
            "max_iterations": params.max_iterations,
            "max_tool_calls": params.max_tool_calls,
            "data_dir": params.data_dir,
            "mock_script": params.mock_script,
        },
    }
    return ProjectManifest(
        display_name=display_name,
        category=identity.get("category", ""),
        domain=identity.get("domain", ""),
        rag_sources=normalized["rag_sources"],
        on_demand_sources=list(on_demand),
        toggles=toggles,
        extensions=extensions,
        params=params,
        normalized=normalized,
    )


# -- extension descriptors ----------------------------------------------------


def _load_tool_descriptors(path: Path) -> list[tuple[ToolSchema, Any]]:
    doc = json.loads(path.read_text("utf-8"))
    tools = []
    for raw in doc.get("tools", []):
        handler_name = raw.get("handler")
        handler = EXTENSION_HANDLERS.get(handler_name)
        if handler is None:
            raise ManifestError(
                f"tool descriptor {raw.get('name')!r} references unknown handler "
                f"{handler_name!r}"
            )
        schema = ToolSchema(
            name=raw["name"],
            description=raw.get("description", ""),
            params=tuple(
                ToolParam(
                    name=p["name"],
                    type=p["type"],
                    required=p.get("required", False),
                    description=p.get("description", ""),
                    default=p.get("default"),
                )
                for p in raw.get("params", [])
            ),
            returns=raw.get("returns", ""),
        )
        tools.append((schema, handler))
    return tools


def _parse_overlay(text: str) -> dict[str, str]:
    """Sectioned overlay file: [slot] headers; bare text fills extra_constraints."""
    from .agents import OVERLAY_SLOTS

    sections: dict[str, list[str]] = {}
    current = None
    bare: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            slot = stripped[1:-1]
            if slot in OVERLAY_SLOTS:
                current = slot
                sections.setdefault(slot, [])
                continue
        if current is None:
            bare.append(line)
        else:
            sections[current].append(line)
    overlays = {slot: "\n".join(lines).strip() for slot, lines in sections.items()}
    bare_text = "\n".join(bare).strip()
    if bare_text:
        overlays["extra_constraints"] = (
            overlays.get("extra_constraints", "") + ("\n" if overlays.get("extra_constraints") else "") + bare_text
        ).strip()
    return overlays


def _load_graph_builder(path: Path):
    doc = json.loads(path.read_text("utf-8"))
    name = doc.get("builder")
    builder = GRAPH_BUILDERS.get(name)
    if builder is None:
        raise ManifestError(f"graph descriptor references unknown builder {name!r}")
    return name, builder


# -- validation ---------------------------------------------------------------


def validate(manifest: ProjectManifest, project_dir: str | Path) -> list[str]:
    """Check paths, extension loadability, and tool-name conflicts.

    Collects every problem instead of failing fast; an empty list means ok.
    """
    project_dir = Path(project_dir)
    errors: list[str] = []
    for entry in manifest.rag_sources:
        root = project_dir / entry["path"]
        if not root.is_dir():
            errors.append(f"rag source path not accessible: {entry['path']}")
    for raw in manifest.on_demand_sources:
        root = project_dir / raw
        if not root.is_dir():
            errors.append(f"on-demand source path not accessible: {raw}")
    if manifest.toggles["tools"]:
        module_path = project_dir / manifest.extensions["tools_module"]
        if not module_path.is_file():
            errors.append(f"tools_module not found: {manifest.extensions['tools_module']}")
        else:
            try:
                descriptors = _load_tool_descriptors(module_path)
            except Exception as exc:
                descriptors = []
                errors.append(f"tools_module failed to load: {exc}")
            core_names = set(core_registry().names())
            for schema, _handler in descriptors:
                if schema.name in core_names:
                    errors.append(
                        f"tool name conflict: project tool {schema.name!r} collides "
                        "with a core tool"
                    )
    if manifest.toggles["prompts"]:
        prompts_dir = project_dir / manifest.extensions["prompts_dir"]
        if not prompts_dir.is_dir():
            errors.append(f"prompts_dir not found: {manifest.extensions['prompts_dir']}")
        else:
            for overlay in sorted(prompts_dir.glob("*.overlay.txt")):
                role = overlay.name.split(".overlay.txt")[0]
                if role not in ROLE_NAMES:
                    errors.append(f"prompt overlay for unknown role: {overlay.name}")
    if manifest.toggles["graph"]:
        graph_path = project_dir / manifest.extensions["graph_module"]
        if not graph_path.is_file():
            errors.append(f"graph_module not found: {manifest.extensions['graph_module']}")
        else:
            try:
                _load_graph_builder(graph_path)
            except (ManifestError, json.JSONDecodeError) as exc:
                errors.append(f"graph_module failed to load: {exc}")
    if manifest.params.mock_script:
        if not (project_dir / manifest.params.mock_script).is_file():
            errors.append(f"mock_script not found: {manifest.params.mock_script}")
    return errors


# -- fingerprint ----------------------------------------------------------------


def compute_fingerprint(
    normalized_manifest: dict, extension_hashes: dict[str, str], core_version: str
) -> str:
    doc = {
        "manifest": normalized_manifest,
        "extensions": extension_hashes,
        "core_version": core_version,
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def fingerprint(config: MergedConfig) -> str:
    return config.fingerprint


def _extension_hashes(manifest: ProjectManifest, project_dir: Path) -> dict[str, str]:
    hashes: dict[str, str] = {}
    paths: list[str] = []
    if manifest.toggles["tools"]:
        paths.append(manifest.extensions["tools_module"])
    if manifest.toggles["graph"]:
        paths.append(manifest.extensions["graph_module"])
    if manifest.toggles["prompts"]:
        prompts_dir = project_dir / manifest.extensions["prompts_dir"]
        paths.extend(
            str(p.relative_to(project_dir)) for p in sorted(prompts_dir.glob("*.overlay.txt"))
        )
    for rel in paths:
        data = (project_dir / rel).read_bytes()
        hashes[Path(rel).as_posix()] = hashlib.sha256(data).hexdigest()
    return hashes


# -- the six-step pipeline ------------------------------------------------------


def bootstrap(manifest: ProjectManifest, project_dir: str | Path) -> MergedConfig:
    """Run the deterministic six-step pipeline and return the merged config.

    Halts with BootstrapError on the first failing step; nothing partial
    is ever returned.
    """
    project_dir = Path(project_dir).resolve()
    problems = validate(manifest, project_dir)
    if problems:
        raise BootstrapError(problems)

    init_trace: list[dict] = []
    params = manifest.params

    # 1. Load manifest and check extension toggles.
    init_trace.append(
        {
            "step": 1,
            "label": "load_manifest",
            "display_name": manifest.display_name,
            "toggles": dict(manifest.toggles),
            "llm_endpoint_env": HttpChatBackend.ENDPOINT_ENV,
            "llm_endpoint": os.environ.get(HttpChatBackend.ENDPOINT_ENV, ""),
            "llm_api_key_env": HttpChatBackend.API_KEY_ENV,
            "llm_api_key": "<redacted>",
        }
    )

    # 2. Merge tool extensions into the registry.
    registry = core_registry()
    merged_tools: list[str] = []
    if manifest.toggles["tools"]:
        module_path = project_dir / manifest.extensions["tools_module"]
        try:
            for schema, handler in _load_tool_descriptors(module_path):
                registry.register(schema, handler, origin="project")
                merged_tools.append(schema.name)
        except Exception as exc:
            raise BootstrapError([f"merge_tools failed: {exc}"])
    init_trace.append(
        {
            "step": 2,
            "label": "merge_tools",
            "enabled": manifest.toggles["tools"],
            "module": manifest.extensions.get("tools_module"),
            "merged": merged_tools,
        }
    )

    # 3. Overlay agent prompts.
    templates = core_prompts()
    overlays_applied: list[str] = []
    prompts: dict[str, str] = {}
    overlay_map: dict[str, dict] = {}
    if manifest.toggles["prompts"]:
        prompts_dir = project_dir / manifest.extensions["prompts_dir"]
        for overlay_file in sorted(prompts_dir.glob("*.overlay.txt")):
            role = overlay_file.name.split(".overlay.txt")[0]
            overlay_map[role] = _parse_overlay(overlay_file.read_text("utf-8"))
            overlays_applied.append(role)
    for role, template in templates.items():
        prompts[role] = template.render(overlay_map.get(role))
    init_trace.append(
        {
            "step": 3,
            "label": "overlay_prompts",
            "enabled": manifest.toggles["prompts"],
            "overlaid_roles": overlays_applied,
        }
    )

    # 4. Apply graph transformations.
    graph = build_core_graph(params.evaluator_enabled)
    builder_name = None
    if manifest.toggles["graph"]:
        graph_path = project_dir / manifest.extensions["graph_module"]
        try:
            builder_name, builder = _load_graph_builder(graph_path)
            graph = augment(graph, builder)
        except Exception as exc:
            raise BootstrapError([f"augment_graph failed: {exc}"])
    init_trace.append(
        {
            "step": 4,
            "label": "augment_graph",
            "enabled": manifest.toggles["graph"],
            "builder": builder_name,
            "nodes": sorted(graph.nodes),
        }
    )

    # 5. Initialize user memory and RAG indices.
    data_dir = project_dir / params.data_dir
    db_path = data_dir / "store.sqlite3"
    index_dir = data_dir / "index"
    ondemand_manifest_path = data_dir / "ondemand_manifest.json"
    rag_roots = [project_dir / e["path"] for e in manifest.rag_sources]
    on_demand_roots = [project_dir / p for p in manifest.on_demand_sources]
    try:
        embedder = make_embedder(params.embedding_backend_id)
        Database(db_path).close()
        store = IndexStore(index_dir, dim=embedder.dim)
        delta = scan_and_index(
            rag_roots,
            store,
            embedder,
            base_dir=project_dir,
            chunk_chars=params.chunk_chars,
            overlap_chars=params.overlap_chars,
        )
        catalog = catalog_on_demand(on_demand_roots, base_dir=project_dir)
        save_on_demand_manifest(ondemand_manifest_path, catalog)
    except Exception as exc:
        raise BootstrapError([f"init_memory_and_indices failed: {exc}"])
    init_trace.append(
        {
            "step": 5,
            "label": "init_memory_and_indices",
            "db_path": str(db_path.relative_to(project_dir)),
            "index_delta": delta.to_dict(),
            "on_demand_entries": len(catalog),
        }
    )

    # 6. Produce the launch configuration.
    digest = compute_fingerprint(
        manifest.normalized, _extension_hashes(manifest, project_dir), CORE_VERSION
    )
    init_trace.append(
        {
            "step": 6,
            "label": "launch_config",
            "fingerprint": digest,
            "core_version": CORE_VERSION,
        }
    )

    return MergedConfig(
        project_dir=project_dir,
        manifest=manifest,
        registry=registry,
        helpers=core_helpers(),
        prompt_templates=templates,
        prompts=prompts,
        graph=graph,
        params=params,
        db_path=db_path,
        index_dir=index_dir,
        ondemand_manifest_path=ondemand_manifest_path,
        rag_roots=rag_roots,
        on_demand_roots=on_demand_roots,
        on_demand_paths=frozenset(e.path for e in catalog),
        init_trace=init_trace,
        fingerprint=digest,
    )
