"""Natural-language optimization modeling pipeline."""

__version__ = "0.1.0"

from optagent.types import (  # noqa: F401
    Advisory,
    ExecutionOutcome,
    Exemplar,
    MathModel,
    OutcomeStatus,
    ParamSpec,
    RevisionTip,
    SolverProgram,
    Task,
    TaskTrace,
    validate_task,
)
