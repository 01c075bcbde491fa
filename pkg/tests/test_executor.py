from __future__ import annotations

import json

import pytest

from optagent import executor as executor_module
from optagent.errors import NoObjective, RunnerProtocolError
from optagent.executor import (
    Executor,
    ExternalRunner,
    RunnerResult,
    RunRequest,
    StubRunner,
    parse_objective,
    parse_runner_output,
)
from optagent.types import OutcomeStatus, SolverProgram

PROGRAM = SolverProgram(source="print(7)")


def _execute(result: RunnerResult) -> "executor_module.ExecutionOutcome":
    executor = Executor(StubRunner([result]))
    return executor.execute(RunRequest(program=PROGRAM, timeout_ms=1000))


def test_ok_result_with_objective_first_line() -> None:
    outcome = _execute(RunnerResult(status_word="ok", stdout="10000\n0\n10\n0\n30", wall_ms=5))
    assert outcome.status is OutcomeStatus.ACCEPT
    assert outcome.objective == 10000


def test_runtime_error_keeps_message() -> None:
    outcome = _execute(
        RunnerResult(
            status_word="runtime_error",
            stderr="IndexError: list index out of range",
            exit_code=1,
        )
    )
    assert outcome.status is OutcomeStatus.RUNTIME_FAILURE
    assert "IndexError: list index out of range" in outcome.error_message


def test_timeout_maps_directly() -> None:
    outcome = _execute(RunnerResult(status_word="timeout", stderr="", exit_code=-9, wall_ms=500))
    assert outcome.status is OutcomeStatus.TIMEOUT
    assert outcome.wall_ms == 500


def test_syntax_error_and_runner_error_map() -> None:
    assert _execute(
        RunnerResult(status_word="syntax_error", stderr="SyntaxError", exit_code=1)
    ).status is OutcomeStatus.SYNTAX_FAILURE
    assert _execute(
        RunnerResult(status_word="runner_error", stderr="boom", exit_code=0)
    ).status is OutcomeStatus.RUNNER_ERROR


def test_not_optimal_marker_wins_over_objective() -> None:
    outcome = _execute(RunnerResult(status_word="ok", stdout="Model is INFEASIBLE\n0\n"))
    assert outcome.status is OutcomeStatus.SOLVER_NOT_OPTIMAL


def test_ok_without_objective_becomes_runtime_failure() -> None:
    outcome = _execute(RunnerResult(status_word="ok", stdout="hello\nworld"))
    assert outcome.status is OutcomeStatus.RUNTIME_FAILURE
    assert outcome.error_message == "no parseable objective"


def test_streams_truncated_to_cap() -> None:
    big = "x" * (80 * 1024)
    outcome = _execute(RunnerResult(status_word="runtime_error", stderr=big, exit_code=1))
    assert len(outcome.stderr) == 64 * 1024


def test_classification_covers_every_status_word() -> None:
    for word in ("ok", "syntax_error", "runtime_error", "timeout", "runner_error"):
        result = RunnerResult(
            status_word=word,
            stdout="5" if word == "ok" else "",
            stderr="" if word == "ok" else "err",
            exit_code=0 if word == "ok" else 1,
        )
        outcome = Executor(StubRunner([result])).execute(
            RunRequest(program=PROGRAM, timeout_ms=10)
        )
        assert isinstance(outcome.status, OutcomeStatus)


# ----------------------------------------------------------- objective scan

def test_parse_objective_first_token() -> None:
    assert parse_objective("10000\n0\n10") == 10000


def test_parse_objective_token_scan_within_line() -> None:
    assert parse_objective("Optimal objective  10.0\n") == 10


def test_parse_objective_banner_fallback() -> None:
    assert parse_objective("solver log line\n42.5\n") == 42.5


def test_parse_objective_rejects_non_numeric_and_non_finite() -> None:
    with pytest.raises(NoObjective):
        parse_objective("hello\nworld")
    with pytest.raises(NoObjective):
        parse_objective("inf nan\n")
    with pytest.raises(NoObjective):
        parse_objective("\n \n")


# ------------------------------------------------------------ protocol I/O

def test_runner_result_invariants() -> None:
    with pytest.raises(RunnerProtocolError):
        RunnerResult(status_word="bogus")
    with pytest.raises(RunnerProtocolError):
        RunnerResult(status_word="ok", exit_code=2)


def test_parse_runner_output_requires_single_json_object() -> None:
    result = parse_runner_output('{"status_word": "ok", "stdout": "1", "exit_code": 0, "wall_ms": 3}')
    assert result.status_word == "ok"
    with pytest.raises(RunnerProtocolError):
        parse_runner_output("")
    with pytest.raises(RunnerProtocolError):
        parse_runner_output("not json")
    with pytest.raises(RunnerProtocolError):
        parse_runner_output("[1, 2]")


def test_run_request_validates_timeout() -> None:
    with pytest.raises(ValueError):
        RunRequest(program=PROGRAM, timeout_ms=0)


# --------------------------------------------------------- external runner

def _fake_runner(tmp_path, body: str) -> list[str]:
    script = tmp_path / "fake_runner.py"
    script.write_text(body)
    return ["python3", str(script)]


def test_external_runner_round_trip(tmp_path) -> None:
    command = _fake_runner(
        tmp_path,
        "import json, sys\n"
        "args = dict(zip(sys.argv[1::2], sys.argv[2::2]))\n"
        "print(json.dumps({'status_word': 'ok', 'stdout': open(args['--file']).read(),"
        " 'stderr': '', 'exit_code': 0, 'wall_ms': 1}))\n",
    )
    runner = ExternalRunner(command)
    executor = Executor(runner)
    program = SolverProgram(source="30\n")
    outcome = executor.execute(
        RunRequest(program=program, timeout_ms=2000, workdir=tmp_path / "work")
    )
    assert outcome.status is OutcomeStatus.ACCEPT
    assert outcome.objective == 30
    # Program text was written to <workdir>/candidate per the protocol.
    assert (tmp_path / "work" / "candidate").read_text() == "30\n"


def test_external_runner_malformed_output_is_protocol_error(tmp_path) -> None:
    command = _fake_runner(tmp_path, "print('definitely not json')\n")
    executor = Executor(ExternalRunner(command))
    with pytest.raises(RunnerProtocolError):
        executor.execute(RunRequest(program=PROGRAM, timeout_ms=2000, workdir=tmp_path / "w"))


def test_external_runner_hang_is_killed_within_grace(tmp_path, monkeypatch) -> None:
    monkeypatch.setattr(executor_module, "KILL_GRACE_SECS", 0.5)
    command = _fake_runner(tmp_path, "import time\ntime.sleep(60)\n")
    executor = Executor(ExternalRunner(command))
    with pytest.raises(RunnerProtocolError):
        executor.execute(RunRequest(program=PROGRAM, timeout_ms=100, workdir=tmp_path / "w"))


def test_stub_runner_exhaustion_is_protocol_error() -> None:
    executor = Executor(StubRunner([]))
    with pytest.raises(RunnerProtocolError):
        executor.execute(RunRequest(program=PROGRAM, timeout_ms=10))


def test_permit_pool_bounds_concurrent_runs() -> None:
    import threading
    import time

    class SlowRunner:
        def __init__(self) -> None:
            self.lock = threading.Lock()
            self.active = 0
            self.peak = 0

        def run(self, request: RunRequest) -> RunnerResult:
            with self.lock:
                self.active += 1
                self.peak = max(self.peak, self.active)
            time.sleep(0.02)
            with self.lock:
                self.active -= 1
            return RunnerResult(status_word="ok", stdout="1\n")

    runner = SlowRunner()
    executor = Executor(runner, max_concurrent=2)
    threads = [
        threading.Thread(
            target=lambda: executor.execute(RunRequest(program=PROGRAM, timeout_ms=1000))
        )
        for _ in range(8)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert runner.peak <= 2
