"""Typed errors raised across the pipeline."""

from __future__ import annotations


class OptAgentError(Exception):
    """Base class for all package errors."""


class InvalidTask(OptAgentError):
    """Task violates its invariants (e.g. empty text)."""


class BackendUnavailable(OptAgentError):
    """Chat or embedding backend could not be reached after retries."""


class ScriptExhausted(OptAgentError):
    """Scripted backend has no reply for the requested (role, round) key."""


class ReplyParseError(OptAgentError):
    """Agent reply did not match the required schema after one repair attempt."""


class CategoryError(ReplyParseError):
    """Advisor insight used a category outside the fixed enum."""


class NoCodeBlock(ReplyParseError):
    """Code reply contained no fenced code block."""


class SplitFormatError(ReplyParseError):
    """Revision reply missing or duplicating the split marker."""


class DimensionMismatch(OptAgentError):
    """Vectors of different dimensions were mixed."""


class EmptyLibrary(OptAgentError):
    """Exemplar library file contained zero valid records."""


class SchemaError(OptAgentError):
    """Dataset record violates the adapter schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class OrderViolation(OptAgentError):
    """Round appended to local memory out of order."""


class NoObjective(OptAgentError):
    """Program stdout contained no parseable objective value."""


class RunnerProtocolError(OptAgentError):
    """External runner violated the result protocol."""


class EmptySet(OptAgentError):
    """Aggregation requested over an empty collection."""


class PipelineError(OptAgentError):
    """An agent or backend failure aborted the task pipeline."""


class ConfigError(OptAgentError):
    """Invalid configuration file or option value."""
