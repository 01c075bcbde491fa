"""Four-phase pipeline: understand, model, implement, revise.

The generation phase runs the four agents in a fixed order and executes the
produced program. When execution fails and revision is enabled, the loop
re-enters through the revision agents until the run succeeds or the round
limit is reached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from optagent.agents import AgentSuite
from optagent.errors import OptAgentError
from optagent.executor import DEFAULT_TIMEOUT_MS, Executor, RunRequest
from optagent.memory import GlobalMemory, LocalMemory, RoundEntry
from optagent.retrieval import (
    Library,
    MmrParams,
    RetrievedSet,
    coarse_retrieve,
    rerank,
    type_hint_from_essence,
)
from optagent.types import (
    ExecutionOutcome,
    RetrievalRecord,
    RevisionRound,
    Task,
    TaskTrace,
    validate_task,
)

PIPELINE_ERROR_STATUS = "PipelineError"


@dataclass(frozen=True)
class PipelineConfig:
    max_revisions: int = 3
    enable_iar: bool = True
    enable_hrag: bool = True
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    mmr: MmrParams = field(default_factory=MmrParams)

    def __post_init__(self) -> None:
        if self.max_revisions < 0:
            raise ValueError("max_revisions must be >= 0")


@dataclass
class PipelineDeps:
    """Everything a task run needs besides its configuration."""

    agents: AgentSuite
    executor: Executor
    global_memory: GlobalMemory
    library: Library | None = None
    embedder: object | None = None
    workdir_root: str | Path | None = None


def _record_set(retrieved: RetrievedSet) -> RetrievalRecord:
    return RetrievalRecord(
        kind=retrieved.kind, items=retrieved.items, empty_signal=retrieved.empty_signal
    )


def _retrieve(
    task: Task,
    kind: str,
    cfg: PipelineConfig,
    deps: PipelineDeps,
    type_hint: str | None,
    query_text: str,
) -> RetrievedSet:
    """HRAG for one agent; disabled or library-less runs make zero calls."""
    if not cfg.enable_hrag or deps.library is None or deps.embedder is None:
        return RetrievedSet(kind=kind)
    candidates = coarse_retrieve(
        deps.library, task, deps.embedder, cfg.mmr, type_hint=type_hint, query_text=query_text
    )
    return rerank(
        candidates,
        task,
        kind,
        deps.agents.backend,
        deps.agents.templates["reranker"],
        deps.agents.model_name,
    )


def _workdir(deps: PipelineDeps, task: Task) -> Path | None:
    if deps.workdir_root is None:
        return None
    safe_id = "".join(c if c.isalnum() or c in "-_." else "_" for c in task.id)
    return Path(deps.workdir_root) / safe_id


def run_generation(
    task: Task, cfg: PipelineConfig, deps: PipelineDeps, memory: LocalMemory
) -> TaskTrace:
    """Agents in sequence, then the first execution; records round 0."""
    validate_task(task)
    gm = deps.global_memory

    param = deps.agents.extract_parameters(task, comment="None")
    gm.append(task.id, "param_extractor", 0, param.to_dict())

    param_comment = json.dumps(param.to_dict()["entries"], indent=2, ensure_ascii=False)
    advisory = deps.agents.advise(task, param_comment)
    gm.append(task.id, "modeling_advisor", 0, advisory.to_dict())

    hint = type_hint_from_essence(advisory.essence())
    retrieved_model = _retrieve(task, "Modeling", cfg, deps, hint, query_text=task.text)
    model = deps.agents.formulate(task, param, advisory, retrieved_model)
    gm.append(task.id, "modeling_expert", 0, model.to_dict())

    # Code retrieval sees the task plus the freshly formulated model.
    code_query = task.text + "\n" + json.dumps(model.to_dict(), ensure_ascii=False)
    retrieved_code = _retrieve(task, "Code", cfg, deps, hint, query_text=code_query)
    program = deps.agents.generate_code(task, model, retrieved_code)
    gm.append(task.id, "code_expert", 0, program.to_dict())

    outcome = deps.executor.execute(
        RunRequest(program=program, timeout_ms=cfg.timeout_ms, workdir=_workdir(deps, task))
    )
    gm.append(task.id, "executor", 0, outcome.to_dict())

    memory.record_round(
        RoundEntry(round_index=0, model=model, program=program, outcome=outcome)
    )
    return TaskTrace(
        task_id=task.id,
        param=param,
        advisory=advisory,
        retrieval_model=_record_set(retrieved_model),
        retrieval_code=_record_set(retrieved_code),
        model=model,
        program=program,
        outcomes=(outcome,),
        final_status=outcome.status.value,
    )


def run_iar(
    task: Task,
    trace: TaskTrace,
    cfg: PipelineConfig,
    deps: PipelineDeps,
    memory: LocalMemory,
) -> TaskTrace:
    """Revision rounds until success or the limit; a no-op on round-0 success."""
    if not cfg.enable_iar:
        return trace
    outcome = memory.last_outcome()
    if outcome is None or not outcome.status.is_failure:
        return trace

    gm = deps.global_memory
    revisions: list[RevisionRound] = []
    outcomes: list[ExecutionOutcome] = list(trace.outcomes)
    error_note: str | None = None

    for round_index in range(1, cfg.max_revisions + 1):
        prior = memory.rounds[-1]
        error_text = f"{outcome.status.value}: {outcome.error_message or ''}".strip()
        model_tip_prev, code_tip_prev = memory.last_tips()
        try:
            model_reply = deps.agents.revise_model(
                task, prior.model, error_text, last_tip=model_tip_prev
            )
            code_reply = deps.agents.revise_code(
                task,
                prior.program,
                model_reply.corrected_model,
                error_text,
                last_tip=code_tip_prev,
            )
        except OptAgentError as exc:
            # A failed revision round keeps the prior execution status final.
            error_note = f"revision round {round_index} failed: {exc}"
            break
        gm.append(task.id, "modeling_revision", round_index, model_reply.tip.to_dict())
        gm.append(task.id, "code_revision", round_index, code_reply.tip.to_dict())

        outcome = deps.executor.execute(
            RunRequest(
                program=code_reply.corrected_program,
                timeout_ms=cfg.timeout_ms,
                workdir=_workdir(deps, task),
            )
        )
        gm.append(task.id, "executor", round_index, outcome.to_dict())

        round_record = RevisionRound(
            model_tip=model_reply.tip,
            code_tip=code_reply.tip,
            model=model_reply.corrected_model,
            program=code_reply.corrected_program,
            outcome=outcome,
        )
        memory.record_round(
            RoundEntry(
                round_index=round_index,
                model=model_reply.corrected_model,
                program=code_reply.corrected_program,
                outcome=outcome,
                model_tip=model_reply.tip,
                code_tip=code_reply.tip,
            )
        )
        revisions.append(round_record)
        outcomes.append(outcome)
        if not outcome.status.is_failure:
            break

    final = memory.last_outcome()
    return replace(
        trace,
        outcomes=tuple(outcomes),
        revisions=tuple(revisions),
        revision_count=len(revisions),
        final_status=final.status.value if final is not None else trace.final_status,
        error=error_note,
    )


def solve(task: Task, cfg: PipelineConfig, deps: PipelineDeps) -> TaskTrace:
    """Full pipeline for one task; agent failures become a PipelineError trace."""
    memory = LocalMemory(task.id)
    try:
        trace = run_generation(task, cfg, deps, memory)
    except OptAgentError as exc:
        return TaskTrace(
            task_id=task.id,
            final_status=PIPELINE_ERROR_STATUS,
            error=f"{type(exc).__name__}: {exc}",
        )
    return run_iar(task, trace, cfg, deps, memory)


def write_trace(trace: TaskTrace, out_dir: str | Path) -> Path:
    """One pretty-printed trace file per task id."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    safe_id = "".join(c if c.isalnum() or c in "-_." else "_" for c in trace.task_id)
    path = out / f"{safe_id}.trace.json"
    path.write_text(trace.to_json(), encoding="utf-8")
    return path
