from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from optagent.backends import ScriptedBackend
from optagent.errors import DimensionMismatch, EmptyLibrary
from optagent.retrieval import (
    HashingEmbedder,
    Library,
    MmrParams,
    RetrievedSet,
    coarse_retrieve,
    load_library,
    mmr_select,
    parse_library_lines,
    rerank,
    type_hint_from_essence,
)
from optagent.templates import load_template
from optagent.types import Exemplar, Task

from conftest import FIXTURES


# Independent brute-force evaluator of the selection formula; pure Python,
# shares no code with the implementation under test.
def mmr_oracle(query, candidate_vectors, lambda_: float, k: int) -> list[int]:
    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return dot / (na * nb) if na * nb else 0.0

    remaining = list(range(len(candidate_vectors)))
    selected: list[int] = []
    while remaining and len(selected) < k:
        scores = {}
        for i in remaining:
            if not selected:
                scores[i] = cos(candidate_vectors[i], query)
            else:
                redundancy = max(cos(candidate_vectors[i], candidate_vectors[j]) for j in selected)
                scores[i] = lambda_ * cos(candidate_vectors[i], query) - (1 - lambda_) * redundancy
        top = max(scores.values())
        best = min(i for i in remaining if scores[i] >= top - 1e-9)
        selected.append(best)
        remaining.remove(best)
    return selected


def _unit(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    return vec / np.linalg.norm(vec)


# ----------------------------------------------------------------- loading

def test_load_library_skips_comments_and_junk() -> None:
    raw = (FIXTURES / "library_small.md").read_text()
    exemplars = parse_library_lines(raw, source_path="library_small.md")
    assert len(exemplars) == 3
    assert [e.source_line for e in exemplars] == [2, 4, 7]


def test_load_library_defaults_missing_metadata() -> None:
    raw = (FIXTURES / "library_small.md").read_text()
    exemplars = parse_library_lines(raw)
    assert exemplars[2].problem_type == "general"
    assert exemplars[2].problem_subtype == "general"


def test_load_library_of_only_comments_is_empty(tmp_path) -> None:
    path = tmp_path / "lib.md"
    path.write_text("# one\n<!-- two -->\n```\n")
    with pytest.raises(EmptyLibrary):
        load_library(path, HashingEmbedder())


def test_load_library_embeds_one_vector_per_exemplar(tmp_path) -> None:
    library = load_library(FIXTURES / "library_small.md", HashingEmbedder())
    assert library.vectors.shape == (3, 64)
    assert np.allclose(np.linalg.norm(library.vectors, axis=1), 1.0, atol=1e-9)


def test_load_library_vector_cache_round_trip(tmp_path) -> None:
    embedder = HashingEmbedder()
    first = load_library(FIXTURES / "library_small.md", embedder, cache_dir=tmp_path)
    cached = load_library(FIXTURES / "library_small.md", embedder, cache_dir=tmp_path)
    assert np.allclose(first.vectors, cached.vectors)
    assert list(tmp_path.glob("vectors-*.json"))


# ---------------------------------------------------------------- embedder

def test_hash_embedder_is_deterministic_and_normalized() -> None:
    embedder = HashingEmbedder()
    a1, a2 = embedder.embed(["ship goods between depots", "ship goods between depots"])
    assert np.array_equal(a1, a2)
    assert abs(np.linalg.norm(a1) - 1.0) < 1e-9
    batch = embedder.embed(["one", "two", "three"])
    assert len(batch) == 3


def test_hash_embedder_handles_empty_text() -> None:
    (vec,) = HashingEmbedder().embed([""])
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-9


# --------------------------------------------------------------------- MMR

def test_mmr_lambda_one_is_relevance_ranking() -> None:
    query = _unit([1.0, 0.0, 0.0])
    candidates = [
        (0, _unit([0.9, math.sqrt(1 - 0.81), 0.0])),
        (1, _unit([0.8, math.sqrt(1 - 0.64), 0.0])),
        (2, _unit([0.7, math.sqrt(1 - 0.49), 0.0])),
    ]
    params = MmrParams(lambda_=1.0, k=2, fetch_k=10)
    assert mmr_select(query, candidates, params) == [0, 1]


def test_mmr_balances_relevance_against_redundancy() -> None:
    # rel(d0)=.9, rel(d1)=.8, rel(d2)=.5, sim(d0,d1)=.95, sim(d0,d2)=.1:
    # after d0, d1 scores .5*.8-.5*.95 = -.075 < d2's .5*.5-.5*.1 = .2.
    query = np.array([1.0, 0.0, 0.0])
    a0 = math.sqrt(1 - 0.81)
    d0 = np.array([0.9, a0, 0.0])
    y1 = (0.95 - 0.72) / a0
    d1 = np.array([0.8, y1, math.sqrt(max(0.0, 1 - 0.64 - y1**2))])
    y2 = (0.1 - 0.45) / a0
    d2 = np.array([0.5, y2, math.sqrt(max(0.0, 1 - 0.25 - y2**2))])
    params = MmrParams(lambda_=0.5, k=2, fetch_k=10)
    assert mmr_select(query, [(0, d0), (1, d1), (2, d2)], params) == [0, 2]


def test_mmr_k_beyond_pool_returns_all() -> None:
    query = _unit([1.0, 0.0])
    candidates = [(i, _unit([1.0, float(i)])) for i in range(3)]
    params = MmrParams(lambda_=0.5, k=5, fetch_k=5)
    assert sorted(mmr_select(query, candidates, params)) == [0, 1, 2]


def test_mmr_rejects_dimension_mismatch_and_duplicate_ids() -> None:
    params = MmrParams(k=1, fetch_k=1)
    with pytest.raises(DimensionMismatch):
        mmr_select(_unit([1.0, 0.0]), [(0, _unit([1.0, 0.0, 0.0]))], params)
    with pytest.raises(ValueError):
        mmr_select(_unit([1.0, 0.0]), [(0, _unit([1.0, 0.0])), (0, _unit([0.0, 1.0]))], params)


def test_mmr_matches_oracle_on_random_pools() -> None:
    rng = random.Random(7)
    for _ in range(80):
        size = rng.randint(1, 8)
        dim = rng.choice([2, 3, 5])
        k = rng.randint(1, 4)
        lambda_ = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])
        query = [rng.uniform(-1, 1) for _ in range(dim)]
        vectors = [[rng.uniform(-1, 1) for _ in range(dim)] for _ in range(size)]
        params = MmrParams(lambda_=lambda_, k=k, fetch_k=max(k, size))
        got = mmr_select(
            np.asarray(query), [(i, np.asarray(v)) for i, v in enumerate(vectors)], params
        )
        assert got == mmr_oracle(query, vectors, lambda_, k)


def test_mmr_params_validate_ranges() -> None:
    with pytest.raises(ValueError):
        MmrParams(lambda_=1.5)
    with pytest.raises(ValueError):
        MmrParams(k=5, fetch_k=3)


def test_mmr_lambda_one_property_equals_relevance_sort() -> None:
    rng = random.Random(31)
    for _ in range(40):
        size = rng.randint(1, 8)
        k = rng.randint(1, 4)
        query = np.asarray([rng.uniform(-1, 1) for _ in range(3)])
        candidates = [
            (i, np.asarray([rng.uniform(-1, 1) for _ in range(3)])) for i in range(size)
        ]
        params = MmrParams(lambda_=1.0, k=k, fetch_k=max(k, size))
        got = mmr_select(query, candidates, params)
        from optagent.retrieval import cosine

        ranked = sorted(
            range(size), key=lambda i: (-cosine(candidates[i][1], query), i)
        )[: min(k, size)]
        assert got == ranked


# ------------------------------------------------------------------ coarse

def _typed_library() -> tuple[Library, HashingEmbedder]:
    embedder = HashingEmbedder()
    prompts = [
        ("Blend alloys for strength at lowest cost.", "Linear Programming (LP)"),
        ("Assign crews to shifts with binary choices.", "Mixed-Integer Linear Programming (MILP)"),
        ("Route freight flows through a network cheaply.", "Linear Programming (LP)"),
        ("Schedule machines with integer batch counts.", "Mixed-Integer Linear Programming (MILP)"),
        ("Plan production volumes under hour budgets.", "Linear Programming (LP)"),
    ]
    exemplars = [
        Exemplar(prompt=p, response="## Mathematical Model:\n```\n{}\n```", answer=1.0,
                 problem_type=t, source_line=i + 1)
        for i, (p, t) in enumerate(prompts)
    ]
    vectors = np.vstack(embedder.embed([e.prompt for e in exemplars]))
    return Library(exemplars, vectors, embedder.embedder_id, "hash"), embedder


def test_coarse_retrieve_caps_at_k() -> None:
    library, embedder = _typed_library()
    task = Task(id="q", text="Plan freight routing volumes cheaply.")
    out = coarse_retrieve(library, task, embedder, MmrParams(k=3, fetch_k=10))
    assert 1 <= len(out) <= 3


def test_coarse_retrieve_type_filter_keeps_matches() -> None:
    library, embedder = _typed_library()
    task = Task(id="q", text="Assign integer crews to shifts.")
    out = coarse_retrieve(
        library, task, embedder, MmrParams(k=5, fetch_k=5),
        type_hint="Mixed-Integer Linear Programming (MILP)",
    )
    assert out
    assert all(e.problem_type == "Mixed-Integer Linear Programming (MILP)" for e in out)


def test_coarse_retrieve_type_filter_is_non_destructive() -> None:
    library, embedder = _typed_library()
    task = Task(id="q", text="Assign integer crews to shifts.")
    unfiltered = coarse_retrieve(library, task, embedder, MmrParams(k=3, fetch_k=5))
    hinted = coarse_retrieve(
        library, task, embedder, MmrParams(k=3, fetch_k=5), type_hint="Quadratic Programming (QP)"
    )
    assert hinted == unfiltered


def test_coarse_retrieve_singleton_library() -> None:
    embedder = HashingEmbedder()
    library = load_library(FIXTURES / "library_one.md", embedder)
    task = Task(id="q", text="anything at all")
    out = coarse_retrieve(library, task, embedder, MmrParams(k=3, fetch_k=10))
    assert len(out) == 1


def test_coarse_retrieve_is_deterministic() -> None:
    library, embedder = _typed_library()
    task = Task(id="q", text="Plan production under budgets.")
    first = coarse_retrieve(library, task, embedder, MmrParams(k=3, fetch_k=5))
    second = coarse_retrieve(library, task, embedder, MmrParams(k=3, fetch_k=5))
    assert first == second


# ------------------------------------------------------------------ rerank

def _rerank(reply: str | None, count: int) -> RetrievedSet:
    library, _ = _typed_library()
    candidates = library.exemplars[:count]
    script = {} if reply is None else {("reranker", 0): reply}
    backend = ScriptedBackend(script)
    template = load_template("reranker")
    return rerank(candidates, Task(id="q", text="q"), "Modeling", backend, template, "test-model")


def test_rerank_orders_by_selected_indices() -> None:
    result = _rerank("[2, 0]", 3)
    assert not result.empty_signal
    assert [e.source_line for e in result.items] == [3, 1]


def test_rerank_empty_candidates_yield_empty_signal() -> None:
    result = _rerank(None, 0)
    assert result.empty_signal
    assert result.items == ()


def test_rerank_truncates_to_two() -> None:
    result = _rerank("[0, 1, 2]", 3)
    assert len(result.items) == 2


def test_rerank_parse_failure_degrades_to_empty_signal() -> None:
    assert _rerank("no json here", 3).empty_signal
    assert _rerank("[]", 3).empty_signal


def test_rerank_accepts_scored_objects() -> None:
    reply = json.dumps([{"index": 1, "score": 0.9}, {"index": 0, "score": 0.4}])
    result = _rerank(reply, 2)
    assert [e.source_line for e in result.items] == [2, 1]


def test_retrieved_set_invariants() -> None:
    exemplar = Exemplar(prompt="p", response="r", answer=1.0)
    with pytest.raises(ValueError):
        RetrievedSet(kind="Modeling", items=(exemplar,), empty_signal=True)
    with pytest.raises(ValueError):
        RetrievedSet(kind="Modeling", items=(exemplar,) * 3, empty_signal=False)


# --------------------------------------------------------------- type hint

def test_type_hint_keyword_map() -> None:
    assert type_hint_from_essence("a mixed-integer schedule") == (
        "Mixed-Integer Linear Programming (MILP)"
    )
    assert type_hint_from_essence("plain linear programming task") == "Linear Programming (LP)"
    assert type_hint_from_essence("a satisfiability question") is None
    assert type_hint_from_essence(None) is None
