from __future__ import annotations

import json

from optagent.agents import AgentSuite
from optagent.backends import ReplayBackend
from optagent.executor import Executor, RunnerResult, StubRunner
from optagent.memory import GlobalMemory
from optagent.pipeline import (
    PIPELINE_ERROR_STATUS,
    PipelineConfig,
    PipelineDeps,
    solve,
    write_trace,
)
from optagent.retrieval import HashingEmbedder, load_library
from optagent.types import OutcomeStatus, Task

from conftest import (
    FAIL_RESULT,
    FIXTURES,
    OK_RESULT,
    TEMPLATES,
    generation_script,
    make_deps,
    make_task,
    revision_script,
)


def _stub_results(path) -> list[RunnerResult]:
    results = []
    for line in path.read_text().splitlines():
        record = json.loads(line)
        results.append(
            RunnerResult(
                status_word=record["status_word"],
                stdout=record.get("stdout", ""),
                stderr=record.get("stderr", ""),
                exit_code=int(record.get("exit_code", 0)),
                wall_ms=int(record.get("wall_ms", 0)),
            )
        )
    return results


def _replay_deps() -> PipelineDeps:
    backend = ReplayBackend(FIXTURES / "replay_transport.jsonl")
    return PipelineDeps(
        agents=AgentSuite(backend, model_name="test-model", templates=TEMPLATES),
        executor=Executor(StubRunner(_stub_results(FIXTURES / "stub_transport.jsonl"))),
        global_memory=GlobalMemory(),
    )


def _replay_task() -> Task:
    record = json.loads((FIXTURES / "transport_task.json").read_text())
    return Task(
        id=record["id"], text=record["text"], ground_truth=record["ground_truth"]
    )


def test_happy_path_round_zero_success(default_config) -> None:
    deps = make_deps(generation_script(), [OK_RESULT])
    trace = solve(make_task(), default_config, deps)
    assert trace.final_status == "Accept"
    assert trace.revision_count == 0
    assert len(trace.outcomes) == 1
    assert trace.param is not None and trace.advisory is not None
    assert trace.model is not None and trace.program is not None
    assert trace.retrieval_model.empty_signal and trace.retrieval_code.empty_signal


def test_agent_call_order_is_fixed(default_config) -> None:
    deps = make_deps(generation_script(), [OK_RESULT])
    solve(make_task(), default_config, deps)
    roles = [c.role for c in deps.agents.backend.log.calls()]
    assert roles == ["param_extractor", "modeling_advisor", "modeling_expert", "code_expert"]


def test_hrag_disabled_means_zero_retrieval_calls(default_config) -> None:
    embedder = HashingEmbedder()
    library = load_library(FIXTURES / "library_small.md", embedder)
    baseline_embed_calls = embedder.call_count
    cfg = PipelineConfig(enable_hrag=False)
    deps = make_deps(generation_script(), [OK_RESULT], library=library, embedder=embedder)
    trace = solve(make_task(), cfg, deps)
    assert embedder.call_count == baseline_embed_calls
    assert deps.agents.backend.log.count("reranker") == 0
    assert trace.retrieval_model.empty_signal and trace.retrieval_code.empty_signal


def test_hrag_enabled_retrieves_and_reranks(default_config) -> None:
    embedder = HashingEmbedder()
    library = load_library(FIXTURES / "library_small.md", embedder)
    script = generation_script()
    # Neutral advisory: no essence keyword, so no type filter thins the pool.
    script[("modeling_advisor", 0)] = json.dumps(
        [{"category": "Problem Key Point", "insight": "watch the bound"}]
    )
    script[("reranker", 0)] = "[0, 1]"
    script[("reranker", 1)] = "[0]"
    deps = make_deps(script, [OK_RESULT], library=library, embedder=embedder)
    trace = solve(make_task(), default_config, deps)
    assert deps.agents.backend.log.count("reranker") == 2
    assert not trace.retrieval_model.empty_signal
    assert len(trace.retrieval_model.items) == 2
    assert len(trace.retrieval_code.items) == 1
    roles = [c.role for c in deps.agents.backend.log.calls()]
    assert roles == [
        "param_extractor",
        "modeling_advisor",
        "reranker",
        "modeling_expert",
        "reranker",
        "code_expert",
    ]


def test_type_hint_filters_candidates_before_rerank(default_config) -> None:
    embedder = HashingEmbedder()
    library = load_library(FIXTURES / "library_small.md", embedder)
    script = generation_script()  # essence maps to Linear Programming (LP)
    script[("reranker", 0)] = "[0, 1]"
    script[("reranker", 1)] = "[0]"
    deps = make_deps(script, [OK_RESULT], library=library, embedder=embedder)
    trace = solve(make_task(), default_config, deps)
    assert len(trace.retrieval_model.items) == 1
    assert trace.retrieval_model.items[0].problem_type == "Linear Programming (LP)"


def test_replay_fixture_two_failures_then_accept() -> None:
    trace = solve(_replay_task(), PipelineConfig(), _replay_deps())
    assert trace.revision_count == 2
    assert trace.final_status == "Accept"
    assert [o.status for o in trace.outcomes] == [
        OutcomeStatus.RUNTIME_FAILURE,
        OutcomeStatus.RUNTIME_FAILURE,
        OutcomeStatus.ACCEPT,
    ]
    assert trace.outcomes[-1].objective == 10.0
    assert trace.revisions[0].model_tip.kind.value == "Modeling"
    assert trace.revisions[1].code_tip.kind.value == "Code"


def test_replay_fixture_traces_are_byte_identical() -> None:
    first = solve(_replay_task(), PipelineConfig(), _replay_deps())
    second = solve(_replay_task(), PipelineConfig(), _replay_deps())
    assert first.to_json() == second.to_json()


def test_replay_fixture_matches_golden_trace() -> None:
    trace = solve(_replay_task(), PipelineConfig(), _replay_deps())
    golden = (FIXTURES / "transport_trace.golden.json").read_text()
    assert trace.to_json() == golden


def test_replay_fixture_extracts_expected_parameter_names() -> None:
    trace = solve(_replay_task(), PipelineConfig(), _replay_deps())
    assert trace.param.names() == [
        "Depots",
        "Routes",
        "Goods",
        "Supply",
        "Demand",
        "UnitCost",
        "RouteCapacity",
        "SharedCapacity",
    ]


def test_always_failing_scripts_hit_round_limit() -> None:
    deps = make_deps(revision_script(rounds=3), [FAIL_RESULT] * 4)
    trace = solve(make_task(), PipelineConfig(max_revisions=3), deps)
    assert trace.revision_count == 3
    assert trace.final_status == "RuntimeFailure"
    assert len(trace.outcomes) == 1 + trace.revision_count


def test_round_zero_success_makes_iar_a_noop() -> None:
    on = solve(make_task(), PipelineConfig(enable_iar=True), make_deps(generation_script(), [OK_RESULT]))
    off = solve(make_task(), PipelineConfig(enable_iar=False), make_deps(generation_script(), [OK_RESULT]))
    assert on.revision_count == 0
    assert on.to_json() == off.to_json()


def test_iar_disabled_keeps_round_zero_failure() -> None:
    deps = make_deps(revision_script(), [FAIL_RESULT])
    trace = solve(make_task(), PipelineConfig(enable_iar=False), deps)
    assert trace.revision_count == 0
    assert trace.final_status == "RuntimeFailure"
    assert deps.agents.backend.log.count("modeling_revision") == 0


def test_max_revisions_zero_is_final_after_round_zero() -> None:
    deps = make_deps(revision_script(), [FAIL_RESULT])
    trace = solve(make_task(), PipelineConfig(max_revisions=0), deps)
    assert trace.revision_count == 0
    assert trace.final_status == "RuntimeFailure"


def test_generation_agent_failure_becomes_pipeline_error() -> None:
    script = generation_script()
    script[("modeling_expert", 0)] = "not json"
    script[("modeling_expert", 1)] = "still not json"
    deps = make_deps(script, [OK_RESULT])
    trace = solve(make_task(), PipelineConfig(), deps)
    assert trace.final_status == PIPELINE_ERROR_STATUS
    assert "ReplyParseError" in trace.error
    assert trace.outcomes == ()


def test_invalid_task_becomes_pipeline_error() -> None:
    deps = make_deps(generation_script(), [OK_RESULT])
    trace = solve(make_task(text="   "), PipelineConfig(), deps)
    assert trace.final_status == PIPELINE_ERROR_STATUS


def test_revision_agent_failure_keeps_prior_status() -> None:
    script = generation_script()
    # Revision replies lack the split marker twice: the round fails.
    script[("modeling_revision", 0)] = "no marker"
    script[("modeling_revision", 1)] = "no marker"
    deps = make_deps(script, [FAIL_RESULT])
    trace = solve(make_task(), PipelineConfig(), deps)
    assert trace.final_status == "RuntimeFailure"
    assert trace.revision_count == 0
    assert "revision round 1 failed" in trace.error


def test_executions_bounded_by_revisions(default_config) -> None:
    deps = make_deps(revision_script(rounds=2), [FAIL_RESULT, FAIL_RESULT, OK_RESULT])
    trace = solve(make_task(), PipelineConfig(max_revisions=2), deps)
    assert len(trace.outcomes) == 1 + trace.revision_count
    assert trace.final_status == "Accept"


def test_revision_stops_early_on_success() -> None:
    deps = make_deps(revision_script(rounds=3), [FAIL_RESULT, OK_RESULT])
    trace = solve(make_task(), PipelineConfig(max_revisions=3), deps)
    assert trace.revision_count == 1
    assert trace.final_status == "Accept"


def test_local_memory_never_shared_across_tasks(default_config) -> None:
    # Two tasks, two solves: their traces reference their own ids only.
    t1 = solve(make_task(task_id="alpha"), default_config, make_deps(generation_script(), [OK_RESULT]))
    t2 = solve(make_task(task_id="beta"), default_config, make_deps(generation_script(), [OK_RESULT]))
    assert t1.task_id == "alpha"
    assert t2.task_id == "beta"


def test_global_memory_records_every_phase(default_config) -> None:
    deps = make_deps(generation_script(), [OK_RESULT])
    solve(make_task(), default_config, deps)
    roles = [r.agent_role for r in deps.global_memory.read()]
    assert roles == [
        "param_extractor",
        "modeling_advisor",
        "modeling_expert",
        "code_expert",
        "executor",
    ]


def test_write_trace_produces_one_file_per_task(tmp_path, default_config) -> None:
    trace = solve(make_task(task_id="a/b c"), default_config, make_deps(generation_script(), [OK_RESULT]))
    path = write_trace(trace, tmp_path)
    assert path.name == "a_b_c.trace.json"
    assert json.loads(path.read_text())["task_id"] == "a/b c"


def test_last_tip_flows_into_second_revision_round() -> None:
    deps = make_deps(revision_script(rounds=2), [FAIL_RESULT, FAIL_RESULT, OK_RESULT])
    solve(make_task(), PipelineConfig(max_revisions=2), deps)
    second_round_prompt = deps.agents.backend.log.calls("modeling_revision")[1].user_text
    assert "No tip for reference" not in second_round_prompt
    assert "capacity bound" in second_round_prompt
