"""Command-line interface: ingest, query, eval, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .engine import IngestError, MemoryEngine, UnknownUserError
from .evaluate import gateway_judge, load_cases, run_eval
from .gateway import HttpBackend, HttpBackendConfig, LLMGateway, load_script
from .model import ConfigError, EngineConfig, validate_config
from .transcript import TranscriptError, load_transcript

_CONFIG_FLAGS = {
    "boundary_threshold": "boundary_confidence_threshold",
    "max_buffer_size": "max_buffer_size",
    "similarity_threshold": "similarity_threshold",
    "top_k": "top_k_episodes",
    "semantic_multiplier": "semantic_multiplier",
    "raw_text_episodes": "raw_text_episode_count",
    "learning_limit": "semantic_retrieval_limit_for_learning",
}


def provider_options(command):
    for option in reversed(
        [
            click.option("--provider", type=click.Choice(["scripted", "http"]), default="http",
                         show_default=True, help="Which LLM backend to use."),
            click.option("--script", type=click.Path(exists=True, dir_okay=False),
                         help="Scripted-provider rule file (JSON)."),
            click.option("--base-url", default="https://api.openai.com/v1", show_default=True),
            click.option("--model", default="gpt-4o-mini", show_default=True,
                         help="Chat model name for the HTTP backend."),
            click.option("--embedding-model", default="text-embedding-3-small", show_default=True),
            click.option("--api-key-env", default="MEMOIR_API_KEY", show_default=True,
                         help="Environment variable holding the bearer token."),
            click.option("--request-timeout", default=60.0, show_default=True,
                         help="HTTP request timeout in seconds."),
        ]
    ):
        command = option(command)
    return command


def config_options(command):
    for option in reversed(
        [
            click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                         help="JSON file mirroring the engine config; flags override it."),
            click.option("--boundary-threshold", type=float, default=None),
            click.option("--max-buffer-size", type=int, default=None),
            click.option("--similarity-threshold", type=float, default=None),
            click.option("--top-k", type=int, default=None),
            click.option("--semantic-multiplier", type=int, default=None),
            click.option("--raw-text-episodes", type=int, default=None),
            click.option("--learning-limit", type=int, default=None),
        ]
    ):
        command = option(command)
    return command


def ablation_options(command):
    for option in reversed(
        [
            click.option("--no-episodic-retrieval", is_flag=True,
                         help="Assemble contexts without episodic memories."),
            click.option("--no-semantic-retrieval", is_flag=True,
                         help="Assemble contexts without knowledge statements."),
            click.option("--direct-extraction", is_flag=True,
                         help="Skip prediction; extract knowledge straight from segments."),
        ]
    ):
        command = option(command)
    return command


def build_config(config_path: str | None, flag_values: dict) -> EngineConfig:
    data: dict = {}
    if config_path:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
    cfg = EngineConfig.from_json(data) if data else EngineConfig()
    overrides = {
        field_name: flag_values[flag]
        for flag, field_name in _CONFIG_FLAGS.items()
        if flag_values.get(flag) is not None
    }
    if overrides:
        cfg = EngineConfig(**{**cfg.to_json(), **overrides})
    return validate_config(cfg)


def build_gateway(flag_values: dict) -> LLMGateway:
    if flag_values["provider"] == "scripted":
        if not flag_values.get("script"):
            raise click.UsageError("--provider scripted requires --script FILE")
        return LLMGateway(load_script(flag_values["script"]))
    config = HttpBackendConfig(
        base_url=flag_values["base_url"],
        chat_model=flag_values["model"],
        embedding_model=flag_values["embedding_model"],
        api_key_env=flag_values["api_key_env"],
        timeout_seconds=flag_values["request_timeout"],
    )
    return LLMGateway(HttpBackend(config))


def build_engine(store: str | None, flag_values: dict) -> MemoryEngine:
    try:
        cfg = build_config(flag_values.get("config_path"), flag_values)
    except (ConfigError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"bad engine config: {exc}")
    return MemoryEngine(
        build_gateway(flag_values),
        config=cfg,
        store_root=store,
        episodic_retrieval=not flag_values.get("no_episodic_retrieval", False),
        semantic_retrieval=not flag_values.get("no_semantic_retrieval", False),
        direct_extraction=flag_values.get("direct_extraction", False),
    )


@click.group()
@click.version_option(package_name="memoir")
def main() -> None:
    """Self-organizing conversational memory engine."""


@main.command()
@click.option("--transcript", "transcript_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--store", required=True, type=click.Path(file_okay=False))
@provider_options
@config_options
@ablation_options
def ingest(transcript_path: str, store: str, **flags) -> None:
    """Stream a transcript file into the memory store."""
    try:
        transcript = load_transcript(transcript_path)
    except TranscriptError as exc:
        raise click.ClickException(str(exc))
    engine = build_engine(store, flags)
    try:
        report = engine.ingest(transcript)
    except IngestError as exc:
        click.echo(json.dumps({"aborted": str(exc), **exc.report.to_json()}, indent=2))
        sys.exit(1)
    finally:
        engine.close()
    click.echo(json.dumps(report.to_json(), indent=2))


@main.command()
@click.option("--store", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--user", required=True)
@click.option("--question", required=True)
@click.option("--show-context", is_flag=True, help="Also print the assembled memory context.")
@provider_options
@config_options
@ablation_options
def query(store: str, user: str, question: str, show_context: bool, **flags) -> None:
    """Answer a question against an existing store."""
    engine = build_engine(store, flags)
    try:
        answer, context = engine.answer(user, question, k=flags.get("top_k"))
    except UnknownUserError as exc:
        raise click.ClickException(str(exc))
    finally:
        engine.close()
    if show_context:
        click.echo(context.rendered)
    click.echo(answer)


@main.command()
@click.option("--store", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cases", "cases_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--user", required=True)
@click.option("--judge-template", type=click.Path(exists=True, dir_okay=False),
              help="Enable LLM-judge scoring with this prompt template file.")
@provider_options
@config_options
@ablation_options
def eval(store: str, cases_path: str, report_path: str, user: str,
         judge_template: str | None, **flags) -> None:
    """Answer and score a cases file; write a JSON report."""
    engine = build_engine(store, flags)
    judge = gateway_judge(engine.gateway, judge_template) if judge_template else None
    try:
        report = run_eval(load_cases(cases_path), engine, user,
                          top_k=flags.get("top_k"), judge=judge)
    finally:
        engine.close()
    Path(report_path).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    click.echo(report.to_table())


@main.command()
@click.option("--store", required=True, type=click.Path(file_okay=False))
@click.option("--bind", default="127.0.0.1:8000", show_default=True, help="host:port to listen on.")
@provider_options
@config_options
@ablation_options
def serve(store: str, bind: str, **flags) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError("--bind must look like HOST:PORT")
    engine = build_engine(store, flags)
    uvicorn.run(create_app(engine), host=host, port=int(port))


if __name__ == "__main__":
    main()
