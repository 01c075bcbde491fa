from __future__ import annotations

import json
from pathlib import Path

import pytest

from optagent.agents import AgentSuite
from optagent.backends import ScriptedBackend
from optagent.executor import Executor, RunnerResult, StubRunner
from optagent.memory import GlobalMemory
from optagent.pipeline import PipelineConfig, PipelineDeps
from optagent.templates import load_all
from optagent.types import Task

FIXTURES = Path(__file__).parent / "fixtures"

TEMPLATES = load_all()

PARAM_REPLY = json.dumps(
    {"Limit": {"Type": "int", "Definition": "upper bound on production"}}
)
ADVISORY_REPLY = json.dumps(
    [
        {"category": "Problem Essence", "insight": "This is a small linear program."},
        {"category": "Problem Key Point", "insight": "Production cannot exceed the limit."},
    ]
)
MODEL_REPLY = json.dumps(
    {"VARIABLES": "x >= 0 units", "CONSTRAINTS": ["x <= 10"], "OBJECTIVE": "maximize 3 * x"}
)
CODE_REPLY = "Solution below.\n\n```python\nprint(3 * 10)\n```"

TIP_MODEL = json.dumps(
    {
        "tip_type": "modeling",
        "scenario": "production planning",
        "error_statement": "The capacity bound was dropped from the model.",
        "correct_component": "x <= 10",
        "incorrect_model": "x unbounded above",
    }
)
TIP_CODE = json.dumps(
    {
        "tip_type": "code",
        "scenario": "production planning",
        "error_statement": "The loop read one element past the rate table.",
        "correct_code_snippet": "rates[i] for i in range(len(rates))",
        "incorrect_code_snippet": "rates[i] for i in range(len(rates) + 1)",
    }
)
REVISED_MODEL_REPLY = f"{TIP_MODEL}\n<split>\n{MODEL_REPLY}"
REVISED_CODE_REPLY = f"{TIP_CODE}\n<split>\n{json.dumps('print(30)')}"

OK_RESULT = RunnerResult(status_word="ok", stdout="30\n10\n", exit_code=0, wall_ms=12)
FAIL_RESULT = RunnerResult(
    status_word="runtime_error",
    stderr="IndexError: list index out of range",
    exit_code=1,
    wall_ms=9,
)


def make_task(text: str = "Maximize production of a machine capped at 10 runs of 3 units.",
              task_id: str = "t-0", ground_truth: float | None = 30.0,
              dataset_tag: str | None = None) -> Task:
    return Task(id=task_id, text=text, ground_truth=ground_truth, dataset_tag=dataset_tag)


def generation_script() -> dict[tuple[str, int], str]:
    return {
        ("param_extractor", 0): PARAM_REPLY,
        ("modeling_advisor", 0): ADVISORY_REPLY,
        ("modeling_expert", 0): MODEL_REPLY,
        ("code_expert", 0): CODE_REPLY,
    }


def revision_script(rounds: int = 3) -> dict[tuple[str, int], str]:
    script = generation_script()
    for r in range(rounds):
        script[("modeling_revision", r)] = REVISED_MODEL_REPLY
        script[("code_revision", r)] = REVISED_CODE_REPLY
    return script


def make_agents(script: dict[tuple[str, int], str], repeat_last: bool = False) -> AgentSuite:
    return AgentSuite(ScriptedBackend(script, repeat_last=repeat_last),
                      model_name="test-model", templates=TEMPLATES)


def make_deps(
    script: dict[tuple[str, int], str],
    results: list[RunnerResult],
    library=None,
    embedder=None,
    journal_path=None,
) -> PipelineDeps:
    return PipelineDeps(
        agents=make_agents(script),
        executor=Executor(StubRunner(results)),
        global_memory=GlobalMemory(journal_path),
        library=library,
        embedder=embedder,
    )


@pytest.fixture
def default_config() -> PipelineConfig:
    return PipelineConfig()
