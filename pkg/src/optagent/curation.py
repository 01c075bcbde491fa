"""Exemplar-library construction: solve, verify, annotate, filter, emit.

Only tasks whose pipeline output judges correct against their ground truth
are retained; retained instances are labeled by a classifier agent and
dropped when the label is unparseable or insufficiently confident.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from optagent.backends import ChatRequest
from optagent.errors import EmptyLibrary
from optagent.evaluation import Verdict, judge_trace
from optagent.pipeline import PipelineConfig, PipelineDeps, solve
from optagent.retrieval import parse_library_lines
from optagent.types import Task, TaskTrace

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_THRESHOLD = 0.5

# How a kept instance's model and code are joined into one exposition.
RESPONSE_TEMPLATE = "## Mathematical Model:\n```\n{model}\n```\n\n## Python Code:\n```python\n{code}\n```"


@dataclass(frozen=True)
class Label:
    problem_type: str
    problem_subtype: str
    confidence: float


def _parse_label(reply: str) -> Label:
    from optagent.agents import unwrap_fences

    data = json.loads(unwrap_fences(reply))
    if not isinstance(data, dict):
        raise ValueError("label reply must be a JSON object")
    return Label(
        problem_type=str(data["problem_type"]),
        problem_subtype=str(data["problem_subtype"]),
        confidence=float(data["confidence"]),
    )


def _annotate(task: Task, deps: PipelineDeps) -> Label:
    template = deps.agents.templates["labeler"]
    request = ChatRequest(
        role="labeler",
        system_text=template.role_description,
        user_text=template.render(problem_description=task.text),
        model_name=deps.agents.model_name,
    )
    return _parse_label(deps.agents.backend.complete(request))


def _render_response(trace: TaskTrace) -> str:
    # The judged artifacts are the latest revision's, when any round ran.
    model = trace.revisions[-1].model if trace.revisions else trace.model
    program = trace.revisions[-1].program if trace.revisions else trace.program
    model_text = json.dumps(model.to_dict(), indent=2, ensure_ascii=False)
    return RESPONSE_TEMPLATE.format(model=model_text, code=program.source)


def build_library(
    raw_tasks: list[Task],
    cfg: PipelineConfig,
    deps_factory: Callable[[Task], PipelineDeps],
    out_path: str | Path,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    parallel: int = 1,
    type_cap: int | None = None,
) -> dict[str, Any]:
    """Run the curation pipeline and emit the library plus a manifest.

    Returns the manifest. Per-instance failures are logged and skipped, so
    one bad task never aborts the batch. ``type_cap`` optionally bounds how
    many records any single problem type may contribute (balance is
    otherwise reported, not enforced).
    """
    for task in raw_tasks:
        if task.ground_truth is None:
            raise ValueError(f"curation task {task.id!r} lacks a ground-truth answer")

    def one(task: Task) -> tuple[Task, dict[str, Any] | None, str]:
        deps = deps_factory(task)
        try:
            trace = solve(task, cfg, deps)
            if judge_trace(task, trace).verdict is not Verdict.CORRECT:
                return task, None, "incorrect"
            label = _annotate(task, deps)
        except Exception as exc:
            logger.warning("curation failed for task %s: %s", task.id, exc)
            return task, None, "error"
        if label.confidence < confidence_threshold:
            return task, None, "unconfident"
        record = {
            "en_answer": task.ground_truth,
            "prompt": task.text,
            "response": _render_response(trace),
            "problem_type": label.problem_type,
            "problem_subtype": label.problem_subtype,
        }
        return task, record, "kept"

    if parallel <= 1:
        rows = [one(task) for task in raw_tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(one, raw_tasks))

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    counts = {"kept": 0, "incorrect": 0, "unconfident": 0, "error": 0, "capped": 0}
    per_type: dict[str, int] = {}
    with out.open("w", encoding="utf-8") as handle:
        handle.write("# exemplar library\n")
        for _, record, status in rows:
            if record is not None and type_cap is not None:
                seen = per_type.get(record["problem_type"], 0)
                if seen >= type_cap:
                    counts["capped"] += 1
                    continue
                per_type[record["problem_type"]] = seen + 1
            counts[status] += 1
            if record is not None:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    manifest = {
        "source_count": len(raw_tasks),
        "kept": counts["kept"],
        "dropped_incorrect": counts["incorrect"],
        "dropped_unconfident": counts["unconfident"],
        "dropped_error": counts["error"],
        "dropped_over_type_cap": counts["capped"],
        "confidence_threshold": confidence_threshold,
        "type_cap": type_cap,
        "response_template": RESPONSE_TEMPLATE,
    }
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return manifest


def library_stats(path: str | Path) -> dict[str, Any]:
    """Exact counts plus a balance ratio (max/min type frequency)."""
    raw = Path(path).read_text(encoding="utf-8")
    exemplars = parse_library_lines(raw, source_path=str(path))
    if not exemplars:
        raise EmptyLibrary(f"no valid exemplar lines in {path}")
    histogram: dict[str, int] = {}
    for exemplar in exemplars:
        histogram[exemplar.problem_type] = histogram.get(exemplar.problem_type, 0) + 1
    if len(histogram) > 1:
        ratio: float = max(histogram.values()) / min(histogram.values())
    else:
        ratio = float("inf")
    return {"count": len(exemplars), "per_type": dict(sorted(histogram.items())), "balance_ratio": ratio}
