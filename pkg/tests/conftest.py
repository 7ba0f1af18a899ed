"""Shared fixtures: fixture projects, scripted turns, and a seeded corpus."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from sciassist.bootstrap import bootstrap, load_manifest
from sciassist.runtime import Runtime

DOCS = {
    "alpha.md": (
        "Thermal conductivity measurements of copper alloys at cryogenic "
        "temperatures. The lattice contribution dominates below 40 kelvin and "
        "impurity scattering sets the residual resistivity plateau."
    ),
    "beta.md": (
        "Neutron flux profiles in research reactor cores. Flux peaking near "
        "the moderator boundary constrains fuel element placement and burnup "
        "scheduling across operating cycles."
    ),
    "gamma.md": (
        "Protein folding trajectories from molecular dynamics simulation. "
        "Solvent models change the folding funnel topology and the observed "
        "intermediate states."
    ),
}

CSV_CONTENT = "a,b\n1,x\n2,y\n3,x\n4,z\n"


# -- mock script steps ---------------------------------------------------------


def router_step(route="coordinator", intent="factual", rationale="scripted"):
    return {
        "response": json.dumps(
            {"intent": intent, "route": route, "context_refs": [], "rationale": rationale}
        )
    }


def planner_step(subtasks):
    return {"response": json.dumps({"goal_summary": "scripted goal", "subtasks": subtasks})}


def tool_step(tool="rag_query", args=None):
    return {"response": json.dumps({"action": "tool", "tool": tool, "args": args or {"query": "neutron flux"}})}


def final_step(result="subtask done", notes="consistent"):
    return {"response": json.dumps({"action": "final", "result": result, "consistency_notes": notes})}


def synthesis_step(text="synthesized answer"):
    return {"response": text}


def evaluator_step(severities):
    return {
        "response": json.dumps(
            {"critiques": [{"text": f"critique {i}", "severity": s} for i, s in enumerate(severities)]}
        )
    }


def factual_turn_steps(answer="hello-response"):
    return [
        router_step("coordinator", "factual"),
        tool_step(),
        final_step("retrieved the reactor flux passage"),
        synthesis_step(answer),
    ]


def two_subtask_plan():
    return [
        {
            "subtask_id": "s1",
            "description": "gather background evidence",
            "required_capabilities": ["rag_query"],
            "depends_on": [],
        },
        {
            "subtask_id": "s2",
            "description": "summarize findings",
            "required_capabilities": [],
            "depends_on": ["s1"],
        },
    ]


def analytical_turn_steps(answer="analytical answer", evaluator_severities=None):
    steps = [
        router_step("planner", "analytical"),
        planner_step(two_subtask_plan()),
        tool_step(),
        final_step("s1 evidence collected"),
        final_step("s2 summary written"),
        synthesis_step(answer),
    ]
    if evaluator_severities is not None:
        steps.append(evaluator_step(evaluator_severities))
    return steps


# -- fixture project -------------------------------------------------------------


def make_project(
    tmp_path: Path,
    *,
    script_steps=None,
    evaluator=False,
    docs=DOCS,
    csv_files=None,
    manifest_extra=None,
    runtime_extra=None,
    name="fixture-project",
) -> Path:
    """Write a complete runnable project under tmp_path and return its dir."""
    project = tmp_path / name
    docs_dir = project / "docs"
    data_dir = project / "data"
    docs_dir.mkdir(parents=True)
    data_dir.mkdir()
    for filename, text in docs.items():
        (docs_dir / filename).write_text(text, "utf-8")
    for filename, text in (csv_files or {"table.csv": CSV_CONTENT}).items():
        (data_dir / filename).write_text(text, "utf-8")
    runtime_doc = {
        "model_id": "mock",
        "embedding_backend_id": "hash-64",
        "evaluator": {
            "enabled": evaluator,
            "avg_threshold": 0.5,
            "single_threshold": 0.8,
        },
    }
    if script_steps is not None:
        (project / "script.json").write_text(
            json.dumps({"steps": script_steps}, indent=2), "utf-8"
        )
        runtime_doc["mock_script"] = "script.json"
    runtime_doc.update(runtime_extra or {})
    manifest = {
        "identity": {"display_name": "Fixture Assistant", "category": "test", "domain": "testing"},
        "rag_sources": [{"path": "docs", "description": "seeded corpus"}],
        "on_demand_sources": ["data"],
        "runtime": runtime_doc,
    }
    manifest.update(manifest_extra or {})
    (project / "project.json").write_text(json.dumps(manifest, indent=2), "utf-8")
    return project


def make_runtime(project: Path) -> Runtime:
    manifest = load_manifest(project / "project.json")
    return Runtime(bootstrap(manifest, project))


@pytest.fixture
def project_factory(tmp_path):
    def factory(**kwargs) -> Path:
        return make_project(tmp_path, **kwargs)

    return factory


@pytest.fixture
def runtime_factory(tmp_path):
    runtimes = []
    counter = [0]

    def factory(**kwargs) -> Runtime:
        counter[0] += 1
        kwargs.setdefault("name", f"project-{counter[0]}")
        project = make_project(tmp_path, **kwargs)
        rt = make_runtime(project)
        runtimes.append(rt)
        return rt

    yield factory
    for rt in runtimes:
        rt.close()
