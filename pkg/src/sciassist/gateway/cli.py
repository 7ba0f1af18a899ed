"""Command-line surface: scaffold, validate, index, chat, serve, export."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..bootstrap import ManifestError, load_manifest, validate as validate_manifest
from ..runtime import Runtime

MANIFEST_TEMPLATE = {
    "identity": {
        "display_name": "Scientific Assistant",
        "category": "Research Assistant",
        "domain": "general",
    },
    "rag_sources": [{"path": "docs", "description": "Project document corpus"}],
    "on_demand_sources": ["data"],
    "toggles": {"tools": False, "prompts": False, "graph": False},
    "extensions": {},
    "runtime": {
        "model_id": "mock",
        "embedding_backend_id": "hash-64",
        "evaluator": {"enabled": False, "avg_threshold": 0.5, "single_threshold": 0.8},
    },
}


@click.group()
def main() -> None:
    """Retrieval-grounded multi-agent assistant runtime."""


@main.command()
@click.argument("path", default=".", type=click.Path(file_okay=False))
def init(path: str) -> None:
    """Scaffold a project.json plus empty data directories."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "project.json"
    if manifest_path.exists():
        raise click.ClickException(f"{manifest_path} already exists")
    manifest_path.write_text(json.dumps(MANIFEST_TEMPLATE, indent=2) + "\n", "utf-8")
    (root / "docs").mkdir(exist_ok=True)
    (root / "data").mkdir(exist_ok=True)
    click.echo(f"scaffolded {manifest_path}")


@main.command(name="validate")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def validate_cmd(manifest: str) -> None:
    """Check a manifest's paths, extensions, and tool-name conflicts."""
    path = Path(manifest)
    try:
        parsed = load_manifest(path)
    except ManifestError as exc:
        raise click.ClickException(str(exc))
    errors = validate_manifest(parsed, path.parent)
    if errors:
        for err in errors:
            click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo("ok")


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def index(manifest: str) -> None:
    """Run one incremental indexing pass and print the delta."""
    runtime = Runtime.from_manifest(manifest)
    try:
        step = next(
            entry for entry in runtime.config.init_trace
            if entry["label"] == "init_memory_and_indices"
        )
        for key, value in step["index_delta"].items():
            if key == "errors":
                for err in value:
                    click.echo(f"error: {err['path']}: {err['error']}", err=True)
            else:
                click.echo(f"{key}: {value}")
        click.echo(f"on_demand_entries: {step['on_demand_entries']}")
    finally:
        runtime.close()


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def chat(manifest: str) -> None:
    """Terminal turn loop: reads queries from stdin, prints answers."""
    runtime = Runtime.from_manifest(manifest)
    try:
        descriptor = runtime.create_session()
        click.echo(f"session: {descriptor.session_id}", err=True)
        for line in sys.stdin:
            text = line.strip()
            if not text:
                continue
            result = runtime.post_message(descriptor.session_id, text)
            click.echo(result.final_answer)
    finally:
        runtime.close()


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(manifest: str, port: int, host: str) -> None:
    """Start the HTTP gateway."""
    import uvicorn

    from .server import create_app

    runtime = Runtime.from_manifest(manifest)
    click.echo(f"fingerprint: {runtime.config.fingerprint}")
    uvicorn.run(create_app(runtime), host=host, port=port, log_level="warning")


@main.command()
@click.argument("session_id")
@click.option(
    "--format", "fmt", type=click.Choice(["json", "markdown"]), default="json",
    show_default=True,
)
@click.option(
    "--manifest", default="project.json", show_default=True,
    type=click.Path(exists=True, dir_okay=False),
)
def export(session_id: str, fmt: str, manifest: str) -> None:
    """Export a session's trace bundle."""
    from ..trace import SessionNotFoundError

    runtime = Runtime.from_manifest(manifest)
    try:
        click.echo(runtime.export(session_id, fmt))
    except SessionNotFoundError:
        raise click.ClickException(f"unknown session: {session_id}")
    finally:
        runtime.close()


if __name__ == "__main__":
    main()
