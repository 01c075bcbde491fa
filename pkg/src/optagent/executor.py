"""Runs candidate programs through an external runner process or a stub.

The runner protocol: the executor writes the program to
``<workdir>/candidate`` and invokes the runner with
``--file <path> --timeout-ms <n>``; the runner prints exactly one JSON
object ``{status_word, stdout, stderr, exit_code, wall_ms}`` on stdout.
"""

from __future__ import annotations

import json
import math
import os
import signal
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

from optagent.errors import NoObjective, RunnerProtocolError
from optagent.types import ExecutionOutcome, OutcomeStatus, SolverProgram

DEFAULT_TIMEOUT_MS = 60_000
STREAM_CAP_BYTES = 64 * 1024
KILL_GRACE_SECS = 2.0
MAX_CONCURRENT_RUNS = 4

STATUS_WORDS = ("ok", "syntax_error", "runtime_error", "timeout", "runner_error")

# stdout markers that mean the solver finished without an optimal solution.
DEFAULT_NOT_OPTIMAL_MARKERS = ("infeasible", "unbounded")


@dataclass(frozen=True)
class RunnerResult:
    """What the runner process reports back, verbatim."""

    status_word: str
    stdout: str = ""
    stderr: str = ""
    exit_code: int = 0
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if self.status_word not in STATUS_WORDS:
            raise RunnerProtocolError(f"unknown status_word {self.status_word!r}")
        if self.status_word == "ok" and self.exit_code != 0:
            raise RunnerProtocolError("status ok requires exit_code 0")


@dataclass(frozen=True)
class RunRequest:
    program: SolverProgram
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    workdir: str | Path | None = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


class StubRunner:
    """Scripted runner results consumed in order; keeps tests hermetic."""

    def __init__(self, results: list[RunnerResult]):
        self._results = list(results)
        self._lock = threading.Lock()
        self.calls = 0

    def run(self, request: RunRequest) -> RunnerResult:
        with self._lock:
            self.calls += 1
            if not self._results:
                raise RunnerProtocolError("stub runner exhausted")
            return self._results.pop(0)


class ExternalRunner:
    """Spawns the runner command per the protocol, reaping stragglers."""

    def __init__(self, command: list[str]):
        if not command:
            raise ValueError("runner command must be non-empty")
        self.command = list(command)

    def run(self, request: RunRequest) -> RunnerResult:
        workdir = Path(request.workdir) if request.workdir else Path.cwd()
        workdir.mkdir(parents=True, exist_ok=True)
        candidate = workdir / "candidate"
        candidate.write_text(request.program.source, encoding="utf-8")

        argv = self.command + ["--file", str(candidate), "--timeout-ms", str(request.timeout_ms)]
        deadline = request.timeout_ms / 1000.0 + KILL_GRACE_SECS
        # The runner inherits no credentials: API-key style variables are
        # stripped from its environment.
        env = {k: v for k, v in os.environ.items()
               if not k.endswith("_API_KEY") and "SECRET" not in k and "TOKEN" not in k}
        process = subprocess.Popen(
            argv,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=str(workdir),
            env=env,
            start_new_session=True,
            text=True,
        )
        try:
            out, err = process.communicate(timeout=deadline)
        except subprocess.TimeoutExpired:
            # The runner itself hung: kill its whole process group.
            try:
                os.killpg(process.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            process.wait()
            raise RunnerProtocolError(
                f"runner exceeded {deadline:.1f}s wall limit and was killed"
            )
        return parse_runner_output(out, runner_stderr=err)


def parse_runner_output(out: str, runner_stderr: str = "") -> RunnerResult:
    """Decode the single protocol object the runner must print."""
    text = out.strip()
    if not text:
        raise RunnerProtocolError(f"runner printed no protocol object (stderr: {runner_stderr!r})")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RunnerProtocolError(f"runner output is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise RunnerProtocolError("runner protocol object must be a JSON object")
    try:
        return RunnerResult(
            status_word=payload["status_word"],
            stdout=payload.get("stdout", ""),
            stderr=payload.get("stderr", ""),
            exit_code=int(payload.get("exit_code", 0)),
            wall_ms=int(payload.get("wall_ms", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RunnerProtocolError(f"malformed runner result: {exc}") from exc


def parse_objective(stdout: str) -> float:
    """First finite numeric token on the first non-empty line.

    Falls back to later lines only when the first non-empty line holds no
    numeric token at all (a leaked solver banner).
    """
    lines = [line for line in stdout.splitlines() if line.strip()]
    if not lines:
        raise NoObjective("empty stdout")
    for line in lines:
        for token in line.split():
            try:
                value = float(token)
            except ValueError:
                continue
            if math.isfinite(value):
                return value
    raise NoObjective("no numeric token in stdout")


class Executor:
    """Maps runner results onto execution outcomes, bounding concurrency."""

    def __init__(
        self,
        runner,
        max_concurrent: int = MAX_CONCURRENT_RUNS,
        not_optimal_markers: tuple[str, ...] = DEFAULT_NOT_OPTIMAL_MARKERS,
    ):
        self.runner = runner
        self._permits = threading.BoundedSemaphore(max_concurrent)
        self.not_optimal_markers = tuple(m.lower() for m in not_optimal_markers)

    def execute(self, request: RunRequest) -> ExecutionOutcome:
        with self._permits:
            result = self.runner.run(request)
        return self.classify(result)

    def classify(self, result: RunnerResult) -> ExecutionOutcome:
        """Exhaustive mapping of every runner status to exactly one outcome."""
        stdout = result.stdout[:STREAM_CAP_BYTES]
        stderr = result.stderr[:STREAM_CAP_BYTES]
        if result.status_word == "ok":
            lowered = stdout.lower()
            for marker in self.not_optimal_markers:
                if marker in lowered:
                    return ExecutionOutcome(
                        status=OutcomeStatus.SOLVER_NOT_OPTIMAL,
                        error_message=f"solver reported {marker!r}",
                        stdout=stdout,
                        stderr=stderr,
                        wall_ms=result.wall_ms,
                    )
            try:
                objective = parse_objective(stdout)
            except NoObjective:
                return ExecutionOutcome(
                    status=OutcomeStatus.RUNTIME_FAILURE,
                    error_message="no parseable objective",
                    stdout=stdout,
                    stderr=stderr,
                    wall_ms=result.wall_ms,
                )
            return ExecutionOutcome(
                status=OutcomeStatus.ACCEPT,
                objective=objective,
                stdout=stdout,
                stderr=stderr,
                wall_ms=result.wall_ms,
            )
        status = {
            "syntax_error": OutcomeStatus.SYNTAX_FAILURE,
            "runtime_error": OutcomeStatus.RUNTIME_FAILURE,
            "timeout": OutcomeStatus.TIMEOUT,
            "runner_error": OutcomeStatus.RUNNER_ERROR,
        }[result.status_word]
        message = stderr.strip() or stdout.strip() or result.status_word
        return ExecutionOutcome(
            status=status,
            error_message=message,
            stdout=stdout,
            stderr=stderr,
            wall_ms=result.wall_ms,
        )
