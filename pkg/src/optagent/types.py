"""Domain types shared by every module.

All types here are immutable values with a canonical JSON form; serializing
then deserializing any of them is the identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Mapping

from optagent.errors import InvalidTask


class InsightCategory(str, Enum):
    DOMAIN_TERMINOLOGY = "DomainTerminology"
    PROBLEM_KEY_POINT = "ProblemKeyPoint"
    PROBLEM_ESSENCE = "ProblemEssence"


class OutcomeStatus(str, Enum):
    ACCEPT = "Accept"
    WRONG_ANSWER = "WrongAnswer"
    SYNTAX_FAILURE = "SyntaxFailure"
    RUNTIME_FAILURE = "RuntimeFailure"
    TIMEOUT = "Timeout"
    SOLVER_NOT_OPTIMAL = "SolverNotOptimal"
    RUNNER_ERROR = "RunnerError"

    @property
    def is_failure(self) -> bool:
        return self not in (OutcomeStatus.ACCEPT, OutcomeStatus.WRONG_ANSWER)


class TipKind(str, Enum):
    MODELING = "Modeling"
    CODE = "Code"


FAILURE_STATUSES = tuple(s for s in OutcomeStatus if s.is_failure)


@dataclass(frozen=True)
class Task:
    """A natural-language optimization problem, optionally with its known optimum."""

    id: str
    text: str
    ground_truth: float | None = None
    dataset_tag: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "ground_truth": self.ground_truth,
            "dataset_tag": self.dataset_tag,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Task:
        return cls(
            id=str(data["id"]),
            text=str(data["text"]),
            ground_truth=None if data.get("ground_truth") is None else float(data["ground_truth"]),
            dataset_tag=data.get("dataset_tag"),
        )


def validate_task(task: Task) -> Task:
    """Return the task unchanged if its invariants hold."""
    if not task.text.strip():
        raise InvalidTask(f"task {task.id!r} has empty text")
    return task


@dataclass(frozen=True)
class ParamEntry:
    type_label: str
    definition: str


@dataclass(frozen=True)
class ParamSpec:
    """Ordered map of parameter name -> (type label, semantic definition)."""

    entries: tuple[tuple[str, ParamEntry], ...] = ()

    def __post_init__(self) -> None:
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        for name, entry in self.entries:
            if not entry.type_label or not entry.definition:
                raise ValueError(f"parameter {name!r} has empty type or definition")

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": {
                name: {"type_label": e.type_label, "definition": e.definition}
                for name, e in self.entries
            }
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ParamSpec:
        return cls(
            entries=tuple(
                (name, ParamEntry(raw["type_label"], raw["definition"]))
                for name, raw in data.get("entries", {}).items()
            )
        )


@dataclass(frozen=True)
class Insight:
    category: InsightCategory
    insight: str


@dataclass(frozen=True)
class Advisory:
    """1-3 structured insights produced by the advisor agent."""

    insights: tuple[Insight, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.insights) <= 3:
            raise ValueError(f"advisory must hold 1-3 insights, got {len(self.insights)}")

    def essence(self) -> str | None:
        """Text of the ProblemEssence insight, if one was given."""
        for item in self.insights:
            if item.category is InsightCategory.PROBLEM_ESSENCE:
                return item.insight
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "insights": [
                {"category": i.category.value, "insight": i.insight} for i in self.insights
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Advisory:
        return cls(
            insights=tuple(
                Insight(InsightCategory(raw["category"]), raw["insight"])
                for raw in data["insights"]
            )
        )


@dataclass(frozen=True)
class MathModel:
    """Formal optimization model: decision variables, constraints, objective."""

    variables: str
    constraints: tuple[str, ...]
    objective: str

    def __post_init__(self) -> None:
        if not self.objective.strip():
            raise ValueError("objective must be non-empty")
        # An empty constraint list is only legal when the variables text
        # explicitly declares the model unconstrained.
        if not self.constraints and "unconstrained" not in self.variables.lower():
            raise ValueError("constraints empty but model not declared unconstrained")

    def to_dict(self) -> dict[str, Any]:
        return {
            "variables": self.variables,
            "constraints": list(self.constraints),
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MathModel:
        return cls(
            variables=data["variables"],
            constraints=tuple(data["constraints"]),
            objective=data["objective"],
        )


@dataclass(frozen=True)
class SolverProgram:
    """Executable solver source plus language/solver labels."""

    source: str
    language_tag: str = "python"
    solver_tag: str = "gurobi"

    def __post_init__(self) -> None:
        if not self.source.strip():
            raise ValueError("program source must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "language_tag": self.language_tag,
            "solver_tag": self.solver_tag,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SolverProgram:
        return cls(
            source=data["source"],
            language_tag=data.get("language_tag", "python"),
            solver_tag=data.get("solver_tag", "gurobi"),
        )


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of running a candidate program: a numeric objective or a failure."""

    status: OutcomeStatus
    objective: float | None = None
    error_message: str | None = None
    stdout: str = ""
    stderr: str = ""
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if self.status in (OutcomeStatus.ACCEPT, OutcomeStatus.WRONG_ANSWER):
            if self.objective is None:
                raise ValueError(f"{self.status.value} outcome requires an objective")
        elif self.error_message is None:
            raise ValueError(f"{self.status.value} outcome requires an error message")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "error_message": self.error_message,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExecutionOutcome:
        return cls(
            status=OutcomeStatus(data["status"]),
            objective=data.get("objective"),
            error_message=data.get("error_message"),
            stdout=data.get("stdout", ""),
            stderr=data.get("stderr", ""),
            wall_ms=int(data.get("wall_ms", 0)),
        )


@dataclass(frozen=True)
class RevisionTip:
    """Structured what-went-wrong/where/how-to-fix record for later rounds."""

    kind: TipKind
    scenario: str
    error_statement: str
    correct_fragment: str
    incorrect_fragment: str

    def __post_init__(self) -> None:
        for name in ("scenario", "error_statement", "correct_fragment", "incorrect_fragment"):
            if not getattr(self, name).strip():
                raise ValueError(f"tip field {name!r} must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "scenario": self.scenario,
            "error_statement": self.error_statement,
            "correct_fragment": self.correct_fragment,
            "incorrect_fragment": self.incorrect_fragment,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RevisionTip:
        return cls(
            kind=TipKind(data["kind"]),
            scenario=data["scenario"],
            error_statement=data["error_statement"],
            correct_fragment=data["correct_fragment"],
            incorrect_fragment=data["incorrect_fragment"],
        )


@dataclass(frozen=True)
class Exemplar:
    """One library record: worked problem, exposition, answer, and type labels."""

    prompt: str
    response: str
    answer: float
    problem_type: str = "general"
    problem_subtype: str = "general"
    source_line: int = 0
    source_path: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.answer):
            raise ValueError("exemplar answer must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "response": self.response,
            "answer": self.answer,
            "problem_type": self.problem_type,
            "problem_subtype": self.problem_subtype,
            "source_line": self.source_line,
            "source_path": self.source_path,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Exemplar:
        return cls(
            prompt=data["prompt"],
            response=data["response"],
            answer=float(data["answer"]),
            problem_type=data.get("problem_type", "general"),
            problem_subtype=data.get("problem_subtype", "general"),
            source_line=int(data.get("source_line", 0)),
            source_path=data.get("source_path", ""),
        )


@dataclass(frozen=True)
class RevisionRound:
    """One revision iteration: both tips, the regenerated artifacts, the outcome."""

    model_tip: RevisionTip | None
    code_tip: RevisionTip | None
    model: MathModel | None
    program: SolverProgram | None
    outcome: ExecutionOutcome | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_tip": None if self.model_tip is None else self.model_tip.to_dict(),
            "code_tip": None if self.code_tip is None else self.code_tip.to_dict(),
            "model": None if self.model is None else self.model.to_dict(),
            "program": None if self.program is None else self.program.to_dict(),
            "outcome": None if self.outcome is None else self.outcome.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RevisionRound:
        maybe = lambda t, v: None if v is None else t.from_dict(v)  # noqa: E731
        return cls(
            model_tip=maybe(RevisionTip, data.get("model_tip")),
            code_tip=maybe(RevisionTip, data.get("code_tip")),
            model=maybe(MathModel, data.get("model")),
            program=maybe(SolverProgram, data.get("program")),
            outcome=maybe(ExecutionOutcome, data.get("outcome")),
        )


@dataclass(frozen=True)
class RetrievalRecord:
    """Trace snapshot of one retrieval: what was delivered, or the empty signal."""

    kind: str
    items: tuple[Exemplar, ...] = ()
    empty_signal: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "items": [e.to_dict() for e in self.items],
            "empty_signal": self.empty_signal,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RetrievalRecord:
        return cls(
            kind=data["kind"],
            items=tuple(Exemplar.from_dict(raw) for raw in data.get("items", [])),
            empty_signal=bool(data.get("empty_signal", True)),
        )


@dataclass(frozen=True)
class TaskTrace:
    """Full per-task record of every phase, execution, and revision round."""

    task_id: str
    param: ParamSpec | None = None
    advisory: Advisory | None = None
    retrieval_model: RetrievalRecord | None = None
    retrieval_code: RetrievalRecord | None = None
    model: MathModel | None = None
    program: SolverProgram | None = None
    outcomes: tuple[ExecutionOutcome, ...] = ()
    revisions: tuple[RevisionRound, ...] = ()
    final_status: str = "PipelineError"
    revision_count: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        if self.revision_count != len(self.revisions):
            raise ValueError("revision_count must equal the number of recorded rounds")

    def to_dict(self) -> dict[str, Any]:
        opt = lambda v: None if v is None else v.to_dict()  # noqa: E731
        return {
            "task_id": self.task_id,
            "param": opt(self.param),
            "advisory": opt(self.advisory),
            "retrieval_model": opt(self.retrieval_model),
            "retrieval_code": opt(self.retrieval_code),
            "model": opt(self.model),
            "program": opt(self.program),
            "outcomes": [o.to_dict() for o in self.outcomes],
            "revisions": [r.to_dict() for r in self.revisions],
            "final_status": self.final_status,
            "revision_count": self.revision_count,
            "error": self.error,
        }

    def to_json(self) -> str:
        """Canonical pretty-printed form; byte-stable for deterministic runs."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskTrace:
        maybe = lambda t, v: None if v is None else t.from_dict(v)  # noqa: E731
        return cls(
            task_id=data["task_id"],
            param=maybe(ParamSpec, data.get("param")),
            advisory=maybe(Advisory, data.get("advisory")),
            retrieval_model=maybe(RetrievalRecord, data.get("retrieval_model")),
            retrieval_code=maybe(RetrievalRecord, data.get("retrieval_code")),
            model=maybe(MathModel, data.get("model")),
            program=maybe(SolverProgram, data.get("program")),
            outcomes=tuple(ExecutionOutcome.from_dict(raw) for raw in data.get("outcomes", [])),
            revisions=tuple(RevisionRound.from_dict(raw) for raw in data.get("revisions", [])),
            final_status=data.get("final_status", "PipelineError"),
            revision_count=int(data.get("revision_count", 0)),
            error=data.get("error"),
        )

    @classmethod
    def from_json(cls, raw: str) -> TaskTrace:
        return cls.from_dict(json.loads(raw))


# Kept for introspection/tests: every serializable core type.
CORE_TYPES = (
    Task,
    ParamSpec,
    Advisory,
    MathModel,
    SolverProgram,
    ExecutionOutcome,
    RevisionTip,
    Exemplar,
    TaskTrace,
)


def field_names(cls: type) -> list[str]:
    return [f.name for f in fields(cls)]
