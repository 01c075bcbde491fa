"""Solution judging, pass@1 aggregation, datasets, and benchmark runs.

The judgment rule is tolerance-based, never exact float equality: a
prediction is correct when its relative error is below 1e-3, or, for a zero
ground truth, when its absolute error is below 1e-1 (both strictly).
Percentages are aggregated exactly and rounded to two decimals, half away
from zero, only at presentation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable

from optagent.errors import EmptySet, SchemaError
from optagent.pipeline import PipelineConfig, PipelineDeps, solve, write_trace
from optagent.types import ExecutionOutcome, Task, TaskTrace

REL_TOLERANCE = 1e-3
ABS_TOLERANCE = 1e-1


class Verdict(str, Enum):
    CORRECT = "Correct"
    WRONG_ANSWER = "WrongAnswer"
    EXECUTION_FAILURE = "ExecutionFailure"


@dataclass(frozen=True)
class Judgment:
    verdict: Verdict
    rel_error: float | None = None
    abs_error: float | None = None

    def __post_init__(self) -> None:
        if self.verdict is Verdict.EXECUTION_FAILURE:
            if self.rel_error is not None or self.abs_error is not None:
                raise ValueError("execution failures carry no error measurements")
        elif self.abs_error is None:
            raise ValueError("judged answers must carry an absolute error")


def round2(value: Decimal) -> float:
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def judge_solution(y_star: float, outcome: ExecutionOutcome) -> Judgment:
    """Apply the tolerance rule to one execution outcome."""
    if not math.isfinite(y_star):
        raise ValueError("ground truth must be finite")
    if outcome.objective is None:
        return Judgment(verdict=Verdict.EXECUTION_FAILURE)
    predicted = outcome.objective
    abs_error = abs(y_star - predicted)
    if y_star == 0.0:
        correct = abs_error < ABS_TOLERANCE
        return Judgment(
            verdict=Verdict.CORRECT if correct else Verdict.WRONG_ANSWER,
            rel_error=None,
            abs_error=abs_error,
        )
    rel_error = abs_error / abs(y_star)
    correct = rel_error < REL_TOLERANCE
    return Judgment(
        verdict=Verdict.CORRECT if correct else Verdict.WRONG_ANSWER,
        rel_error=rel_error,
        abs_error=abs_error,
    )


def aggregate_pass1(judgments: Iterable[Judgment]) -> float:
    """Percentage of correct judgments, two decimals."""
    items = list(judgments)
    if not items:
        raise EmptySet("cannot aggregate zero judgments")
    correct = sum(1 for j in items if j.verdict is Verdict.CORRECT)
    return round2(Decimal(correct) * 100 / Decimal(len(items)))


def macro_average(per_dataset: Iterable[float]) -> float:
    """Unweighted mean of per-dataset percentages, two decimals."""
    values = list(per_dataset)
    if not values:
        raise EmptySet("cannot average zero datasets")
    total = sum((Decimal(str(v)) for v in values), Decimal(0))
    return round2(total / Decimal(len(values)))


def decompose_errors(judgments: Iterable[Judgment]) -> tuple[float, float]:
    """(wrong answer rate, compile error rate) as two-decimal percentages.

    Every failure status is one compile-error bucket here: from the
    reporting side a syntax failure, a timeout, a non-optimal solve, and a
    pipeline abort all mean "no comparable number was produced".
    """
    items = list(judgments)
    if not items:
        raise EmptySet("cannot decompose zero judgments")
    wrong = sum(1 for j in items if j.verdict is Verdict.WRONG_ANSWER)
    failed = sum(1 for j in items if j.verdict is Verdict.EXECUTION_FAILURE)
    n = Decimal(len(items))
    return (round2(Decimal(wrong) * 100 / n), round2(Decimal(failed) * 100 / n))


# Named dataset adapters: record field holding the problem text and the
# field holding the ground-truth answer. Upstream benchmark files ship in
# heterogeneous schemas, so adapters stay data, not code.
ADAPTERS: dict[str, tuple[str, str]] = {
    "default": ("question", "answer"),
    "prompt-answer": ("prompt", "en_answer"),
}


def _adapter_fields(adapter: str) -> tuple[str, str]:
    if adapter in ADAPTERS:
        return ADAPTERS[adapter]
    if adapter.startswith("fields:"):
        parts = adapter.split(":")
        if len(parts) == 3 and parts[1] and parts[2]:
            return parts[1], parts[2]
    raise SchemaError(f"unknown dataset adapter {adapter!r}")


def load_dataset(
    path: str | Path,
    adapter: str = "default",
    dataset_tag: str | None = None,
    library_holdout: int = 0,
) -> list[Task]:
    """One task per JSONL record, ground truth attached.

    ``library_holdout`` drops that many records from the end of the file
    (the split reserved as exemplar-library source data).
    """
    text_field, answer_field = _adapter_fields(adapter)
    source = Path(path)
    tag = dataset_tag or source.stem
    tasks: list[Task] = []
    for line_number, line in enumerate(source.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", line=line_number) from exc
        if not isinstance(record, dict) or text_field not in record:
            raise SchemaError(f"record missing field {text_field!r}", line=line_number)
        if answer_field not in record or record[answer_field] is None:
            raise SchemaError(f"record missing field {answer_field!r}", line=line_number)
        try:
            answer = float(record[answer_field])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"answer is not numeric: {exc}", line=line_number) from exc
        task_id = str(record.get("id", f"{tag}-{len(tasks)}"))
        tasks.append(
            Task(id=task_id, text=str(record[text_field]), ground_truth=answer, dataset_tag=tag)
        )
    if library_holdout > 0:
        tasks = tasks[: max(0, len(tasks) - library_holdout)]
    return tasks


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    dataset: str
    verdict: Verdict
    final_status: str
    objective: float | None
    revision_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "dataset": self.dataset,
            "verdict": self.verdict.value,
            "final_status": self.final_status,
            "objective": self.objective,
            "revision_count": self.revision_count,
        }


@dataclass(frozen=True)
class DatasetReport:
    dataset: str
    task_count: int
    accuracy: float
    wrong_rate: float
    compile_rate: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "task_count": self.task_count,
            "accuracy": self.accuracy,
            "wrong_rate": self.wrong_rate,
            "compile_rate": self.compile_rate,
        }


@dataclass(frozen=True)
class Report:
    rows: tuple[DatasetReport, ...]
    macro_avg: float
    results: tuple[TaskResult, ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "macro_avg": self.macro_avg,
            "results": [result.to_dict() for result in self.results],
            "metadata": self.metadata,
        }


def judge_trace(task: Task, trace: TaskTrace) -> Judgment:
    """Judge a finished trace against the task's ground truth."""
    if task.ground_truth is None:
        raise SchemaError(f"task {task.id!r} has no ground truth to judge against")
    if not trace.outcomes:
        return Judgment(verdict=Verdict.EXECUTION_FAILURE)
    return judge_solution(task.ground_truth, trace.outcomes[-1])


def build_report(
    results: Iterable[tuple[Task, TaskTrace, Judgment]],
    metadata: dict[str, Any] | None = None,
) -> Report:
    """Pure aggregation of per-task judgments into the report tables."""
    collected = sorted(results, key=lambda item: (item[0].dataset_tag or "", item[0].id))
    if not collected:
        raise EmptySet("cannot report on zero tasks")
    by_dataset: dict[str, list[Judgment]] = {}
    task_results: list[TaskResult] = []
    for task, trace, judgment in collected:
        tag = task.dataset_tag or "default"
        by_dataset.setdefault(tag, []).append(judgment)
        last_objective = trace.outcomes[-1].objective if trace.outcomes else None
        task_results.append(
            TaskResult(
                task_id=task.id,
                dataset=tag,
                verdict=judgment.verdict,
                final_status=trace.final_status,
                objective=last_objective,
                revision_count=trace.revision_count,
            )
        )
    rows = []
    for dataset in sorted(by_dataset):
        judgments = by_dataset[dataset]
        wrong_rate, compile_rate = decompose_errors(judgments)
        rows.append(
            DatasetReport(
                dataset=dataset,
                task_count=len(judgments),
                accuracy=aggregate_pass1(judgments),
                wrong_rate=wrong_rate,
                compile_rate=compile_rate,
            )
        )
    return Report(
        rows=tuple(rows),
        macro_avg=macro_average(row.accuracy for row in rows),
        results=tuple(task_results),
        metadata=dict(metadata or {}),
    )


def run_benchmark(
    tasks: list[Task],
    cfg: PipelineConfig,
    deps_factory: Callable[[Task], PipelineDeps],
    parallel: int = 1,
    metadata: dict[str, Any] | None = None,
    trace_dir: str | Path | None = None,
) -> Report:
    """Solve all tasks with bounded parallelism, judge, and aggregate.

    Per-task failures never abort the batch: a task whose pipeline dies is
    reported as an execution failure.
    """
    if not tasks:
        raise EmptySet("benchmark needs at least one task")

    def one(task: Task) -> tuple[Task, TaskTrace, Judgment]:
        trace = solve(task, cfg, deps_factory(task))
        return task, trace, judge_trace(task, trace)

    if parallel <= 1:
        outcomes = [one(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(one, tasks))

    if trace_dir is not None:
        for _, trace, _ in outcomes:
            write_trace(trace, trace_dir)
    return build_report(outcomes, metadata=metadata)


ABLATION_VARIANTS = ("full", "no-iar", "no-hrag", "neither")


def variant_config(base: PipelineConfig, variant: str) -> PipelineConfig:
    if variant == "full":
        return replace(base, enable_iar=True, enable_hrag=True)
    if variant == "no-iar":
        return replace(base, enable_iar=False, enable_hrag=True)
    if variant == "no-hrag":
        return replace(base, enable_iar=True, enable_hrag=False)
    if variant == "neither":
        return replace(base, enable_iar=False, enable_hrag=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(
    tasks: list[Task],
    base_cfg: PipelineConfig,
    deps_factory: Callable[[Task], PipelineDeps],
    variants: Iterable[str] = ABLATION_VARIANTS,
    parallel: int = 1,
    metadata: dict[str, Any] | None = None,
) -> dict[str, Report]:
    """One report per configuration variant, for ablation tables."""
    reports = {}
    for variant in variants:
        variant_metadata = dict(metadata or {})
        variant_metadata["variant"] = variant
        reports[variant] = run_benchmark(
            tasks,
            variant_config(base_cfg, variant),
            deps_factory,
            parallel=parallel,
            metadata=variant_metadata,
        )
    return reports
