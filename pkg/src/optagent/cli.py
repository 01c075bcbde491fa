"""Operator entry points: solve, bench, build-library, retrieve.

Exit codes: 0 on pipeline completion (even for wrong answers), 1 on setup
errors, 2 on invalid arguments.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from optagent.agents import AgentSuite
from optagent.config import (
    RunConfig,
    build_backend,
    build_embedder,
    build_executor,
    merge_config,
    parse_config_file,
)
from optagent.errors import OptAgentError
from optagent.memory import GlobalMemory
from optagent.pipeline import PIPELINE_ERROR_STATUS, PipelineConfig, PipelineDeps, solve, write_trace
from optagent.retrieval import MmrParams, load_library
from optagent.templates import load_all
from optagent.types import OutcomeStatus, Task

_GLOBAL_OPTIONS = (
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="Config file of key = value lines."),
    click.option("--backend", default=None, help="replay:<trace.jsonl> or http:<url>."),
    click.option("--model", default=None, help="Model name sent to the backend."),
    click.option("--temperature", type=float, default=None),
    click.option("--max-revisions", type=int, default=None),
    click.option("--no-iar", is_flag=True, default=None, help="Disable the revision loop."),
    click.option("--no-hrag", is_flag=True, default=None, help="Disable exemplar retrieval."),
    click.option("--timeout-secs", type=float, default=None, help="Per-execution time limit."),
    click.option("--exemplar-cap", type=int, default=None),
    click.option("--templates-dir", default=None, help="Prompt template override directory."),
    click.option("--global-journal", default=None, help="Append-only cross-task journal path."),
    click.option("--library", default=None, help="Exemplar library file."),
    click.option("--embedder", default=None, help="hash or http:<url>."),
    click.option("--executor", "executor_spec", default=None,
                 help="stub:<outcomes.jsonl> or external:<command>."),
)


def _with_global_options(command):
    for option in reversed(_GLOBAL_OPTIONS):
        command = option(command)
    return command


def _collect_overrides(kwargs: dict) -> dict:
    mapping = {
        "backend": "backend",
        "model": "model",
        "temperature": "temperature",
        "max_revisions": "max_revisions",
        "no_iar": "no_iar",
        "no_hrag": "no_hrag",
        "timeout_secs": "timeout_secs",
        "exemplar_cap": "exemplar_cap",
        "templates_dir": "templates_dir",
        "global_journal": "global_journal",
        "library": "library",
        "embedder": "embedder",
        "executor_spec": "executor",
    }
    return {target: kwargs[source] for source, target in mapping.items() if source in kwargs}


def _load_config(config_path: str | None, kwargs: dict) -> RunConfig:
    file_entries = parse_config_file(config_path) if config_path else None
    return merge_config(file_entries, _collect_overrides(kwargs))


@dataclass
class _SharedContext:
    """Pieces safe to share across tasks in one CLI invocation."""

    templates: dict
    embedder: object
    library: object | None
    global_memory: GlobalMemory
    executor: object | None  # shared only for external runners
    workdir_root: str | None


def _build_shared(cfg: RunConfig, workdir_root: str | None = None) -> _SharedContext:
    embedder = build_embedder(cfg)
    library = None
    if cfg.library:
        library = load_library(cfg.library, embedder, cache_dir=cfg.cache_dir or None)
    executor = None
    if cfg.executor.startswith("external:"):
        executor = build_executor(cfg)
    return _SharedContext(
        templates=load_all(cfg.templates_dir or None),
        embedder=embedder,
        library=library,
        global_memory=GlobalMemory(cfg.global_journal or None),
        executor=executor,
        workdir_root=workdir_root,
    )


def _build_deps(cfg: RunConfig, shared: _SharedContext) -> PipelineDeps:
    """Per-task deps: fresh backend and (for stubs) a fresh outcome queue."""
    agents = AgentSuite(
        build_backend(cfg),
        model_name=cfg.model,
        templates=shared.templates,
        temperature=cfg.temperature,
    )
    executor = shared.executor if shared.executor is not None else build_executor(cfg)
    return PipelineDeps(
        agents=agents,
        executor=executor,
        global_memory=shared.global_memory,
        library=shared.library,
        embedder=shared.embedder,
        workdir_root=shared.workdir_root,
    )


def _pipeline_config(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        max_revisions=cfg.max_revisions,
        enable_iar=not cfg.no_iar,
        enable_hrag=not cfg.no_hrag,
        timeout_ms=int(cfg.timeout_secs * 1000),
        mmr=MmrParams(lambda_=cfg.mmr_lambda, k=cfg.mmr_k, fetch_k=cfg.mmr_fetch_k),
    )


def _read_task(source: str) -> Task:
    raw = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    try:
        record = json.loads(raw)
    except json.JSONDecodeError:
        record = None
    if isinstance(record, dict) and "text" in record:
        return Task(
            id=str(record.get("id", "task-0")),
            text=record["text"],
            ground_truth=None if record.get("ground_truth") is None
            else float(record["ground_truth"]),
            dataset_tag=record.get("dataset_tag"),
        )
    return Task(id="task-0", text=raw)


def summary_label(final_status: str) -> str:
    """Collapse internal statuses into the two reporting buckets."""
    if final_status == OutcomeStatus.ACCEPT.value:
        return "ACCEPT"
    if final_status == OutcomeStatus.WRONG_ANSWER.value:
        return "WRONG_ANSWER"
    if final_status == PIPELINE_ERROR_STATUS:
        return "PIPELINE_ERROR"
    return "COMPILE_ERROR"


@click.group()
def main() -> None:
    """Natural-language optimization modeling pipeline."""


@main.command("solve")
@click.option("--task", "task_source", required=True,
              help="Task file (JSON or plain text), or - for stdin.")
@click.option("--out", "out_dir", default="out", show_default=True,
              help="Directory for the trace file.")
@_with_global_options
def solve_command(task_source: str, out_dir: str, **kwargs) -> None:
    """Run the full pipeline on one task."""
    try:
        cfg = _load_config(kwargs.pop("config_path", None), kwargs)
        task = _read_task(task_source)
        shared = _build_shared(cfg, workdir_root=str(Path(out_dir) / "work"))
        deps = _build_deps(cfg, shared)
    except (OptAgentError, OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    trace = solve(task, _pipeline_config(cfg), deps)
    write_trace(trace, out_dir)
    _write_effective_config(cfg, out_dir)
    objective = trace.outcomes[-1].objective if trace.outcomes else None
    label = summary_label(trace.final_status)
    suffix = "" if objective is None else f" (objective {objective:g})"
    click.echo(f"{label} after {trace.revision_count} revisions{suffix}")


def _write_effective_config(cfg: RunConfig, out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(
        json.dumps(cfg.effective(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@main.command("bench")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--adapter", default="default", show_default=True,
              help="Dataset field adapter name or fields:<text>:<answer>.")
@click.option("--ablate", type=click.Choice(["all", "none", "no-iar", "no-hrag"]),
              default="none", show_default=True)
@click.option("--parallel", type=int, default=None, help="Worker bound (config default 1).")
@click.option("--library-holdout", type=int, default=0, show_default=True,
              help="Drop this many trailing records (library split).")
@click.option("--out", "out_dir", required=True)
@_with_global_options
def bench_command(
    dataset_path: str,
    adapter: str,
    ablate: str,
    parallel: int | None,
    library_holdout: int,
    out_dir: str,
    **kwargs,
) -> None:
    """Benchmark a dataset and emit report tables and figures."""
    from optagent.evaluation import load_dataset, run_ablation, run_benchmark
    from optagent.reporting import write_ablation_report, write_report

    try:
        cfg = _load_config(kwargs.pop("config_path", None), kwargs)
        if parallel is not None:
            cfg.parallel = parallel
        parallel = cfg.parallel
        tasks = load_dataset(dataset_path, adapter=adapter, library_holdout=library_holdout)
        if not tasks:
            raise click.ClickException("dataset is empty after holdout")
    except OptAgentError as exc:
        raise click.ClickException(str(exc)) from exc

    base = _pipeline_config(cfg)
    metadata = dict(cfg.effective())
    metadata["dataset"] = str(dataset_path)
    try:
        shared = _build_shared(cfg, workdir_root=str(Path(out_dir) / "work"))
    except (OptAgentError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc

    def deps_factory(task: Task) -> PipelineDeps:
        return _build_deps(cfg, shared)

    try:
        if ablate == "all":
            reports = run_ablation(tasks, base, deps_factory, parallel=parallel,
                                   metadata=metadata)
            write_ablation_report(reports, out_dir)
            for variant, report in reports.items():
                click.echo(f"{variant}: macro avg {report.macro_avg:.2f}")
        else:
            if ablate in ("no-iar", "no-hrag"):
                from optagent.evaluation import variant_config

                base = variant_config(base, ablate)
            report = run_benchmark(
                tasks, base, deps_factory, parallel=parallel, metadata=metadata,
                trace_dir=Path(out_dir) / "traces",
            )
            write_report(report, out_dir)
            click.echo(f"macro avg {report.macro_avg:.2f} over {len(tasks)} tasks")
    except OptAgentError as exc:
        raise click.ClickException(str(exc)) from exc
    _write_effective_config(cfg, out_dir)


@main.command("build-library")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSONL tasks with ground-truth answers.")
@click.option("--out", "out_path", required=True)
@click.option("--adapter", default="default", show_default=True)
@click.option("--confidence-threshold", type=float, default=0.5, show_default=True)
@click.option("--type-cap", type=int, default=None,
              help="Keep at most this many records per problem type.")
@click.option("--parallel", type=int, default=None, help="Worker bound (config default 1).")
@_with_global_options
def build_library_command(
    in_path: str,
    out_path: str,
    adapter: str,
    confidence_threshold: float,
    type_cap: int | None,
    parallel: int | None,
    **kwargs,
) -> None:
    """Curate an exemplar library from verified solves."""
    from optagent.curation import build_library
    from optagent.evaluation import load_dataset

    try:
        cfg = _load_config(kwargs.pop("config_path", None), kwargs)
        if parallel is not None:
            cfg.parallel = parallel
        tasks = load_dataset(in_path, adapter=adapter)
        shared = _build_shared(cfg)

        def deps_factory(task: Task) -> PipelineDeps:
            return _build_deps(cfg, shared)

        manifest = build_library(
            tasks,
            _pipeline_config(cfg),
            deps_factory,
            out_path,
            confidence_threshold=confidence_threshold,
            parallel=cfg.parallel,
            type_cap=type_cap,
        )
    except (OptAgentError, ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    _write_effective_config(cfg, str(Path(out_path).parent))
    click.echo(json.dumps(manifest, indent=2, sort_keys=True))


@main.command("retrieve")
@click.option("--query", required=True)
@click.option("--library", "library_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--fetch-k", type=int, default=10, show_default=True)
@click.option("--lambda", "lambda_", type=float, default=0.5, show_default=True)
@click.option("--embedder", default="hash", show_default=True)
def retrieve_command(
    query: str, library_path: str, k: int, fetch_k: int, lambda_: float, embedder: str
) -> None:
    """Debug coarse retrieval against a library file."""
    from optagent.config import build_embedder as make_embedder
    from optagent.retrieval import coarse_retrieve

    try:
        cfg = RunConfig(embedder=embedder)
        emb = make_embedder(cfg)
        library = load_library(library_path, emb)
        params = MmrParams(lambda_=lambda_, k=k, fetch_k=fetch_k)
        task = Task(id="query", text=query)
        candidates = coarse_retrieve(library, task, emb, params)
    except OptAgentError as exc:
        raise click.ClickException(str(exc)) from exc
    for index, exemplar in enumerate(candidates):
        snippet = " ".join(exemplar.prompt.split())[:120]
        click.echo(
            f"[{index}] line={exemplar.source_line} type={exemplar.problem_type} "
            f"subtype={exemplar.problem_subtype} :: {snippet}"
        )


if __name__ == "__main__":
    main()
