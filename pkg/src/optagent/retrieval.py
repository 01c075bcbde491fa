"""Two-stage exemplar retrieval.

Stage one embeds the query, takes the ``fetch_k`` nearest library records by
cosine similarity, thins them to ``k`` with maximal-marginal-relevance
selection, and applies a non-destructive problem-type filter. Stage two asks
the chat backend to rerank the survivors and keeps at most two.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from optagent.backends import ChatBackend, ChatRequest
from optagent.errors import BackendUnavailable, DimensionMismatch, EmptyLibrary
from optagent.templates import PromptTemplate
from optagent.types import Exemplar, Task

EXEMPLAR_CAP = 2
DEFAULT_LAMBDA = 0.5
DEFAULT_K = 3
DEFAULT_FETCH_K = 10
MMR_TIE_EPS = 1e-9

# Lines with these prefixes are commentary in a library file, not records.
_SKIP_PREFIXES = ("#", "<!--", "```")

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class MmrParams:
    """Selection knobs: relevance/diversity trade-off and pool sizes."""

    lambda_: float = DEFAULT_LAMBDA
    k: int = DEFAULT_K
    fetch_k: int = DEFAULT_FETCH_K

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 1 <= self.k <= self.fetch_k:
            raise ValueError("require 1 <= k <= fetch_k")


@dataclass(frozen=True)
class RetrievedSet:
    """At most two exemplars for one agent, or an explicit empty signal."""

    kind: str  # "Modeling" | "Code"
    items: tuple[Exemplar, ...] = ()
    empty_signal: bool = True

    def __post_init__(self) -> None:
        if bool(self.items) == self.empty_signal:
            raise ValueError("items must be non-empty exactly when empty_signal is false")
        if len(self.items) > EXEMPLAR_CAP:
            raise ValueError(f"at most {EXEMPLAR_CAP} exemplars may be delivered")


class HashingEmbedder:
    """Deterministic offline embedder: hashed bag-of-words, unit-normalized."""

    def __init__(self, dim: int = 64):
        self.dim = dim
        self.embedder_id = f"hash-{dim}"
        self.call_count = 0

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        self.call_count += 1
        return [self._one(text) for text in texts]

    def _one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        # Constant feature keeps even empty text off the origin.
        vec[0] = 1.0
        for token in _WORD_RE.findall(text.lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        return vec / np.linalg.norm(vec)


class HttpEmbedder:
    """Embedding service client: POST {model, input} -> {data: [{embedding}]}."""

    def __init__(self, endpoint: str, model_name: str = "text-embedding-v4",
                 api_key_env: str = "OPTAGENT_API_KEY", timeout_secs: float = 120.0):
        self.endpoint = endpoint
        self.model_name = model_name
        self.embedder_id = f"http-{model_name}"
        self.call_count = 0
        self._session = requests.Session()
        self._api_key = os.environ.get(api_key_env, "")
        self._timeout = timeout_secs

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        self.call_count += 1
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            response = self._session.post(
                self.endpoint,
                json={"model": self.model_name, "input": texts},
                headers=headers,
                timeout=self._timeout,
            )
            response.raise_for_status()
            rows = response.json()["data"]
        except Exception as exc:  # transport or schema failure
            raise BackendUnavailable(f"embedding endpoint failed: {exc}") from exc
        vectors = []
        for row in rows:
            vec = np.asarray(row["embedding"], dtype=np.float64)
            vectors.append(vec / np.linalg.norm(vec))
        return vectors


@dataclass
class Library:
    """Loaded exemplar library plus one embedding vector per exemplar."""

    exemplars: list[Exemplar]
    vectors: np.ndarray  # shape (n, dim), rows unit-normalized
    embedder_id: str
    content_hash: str

    def __len__(self) -> int:
        return len(self.exemplars)


def parse_library_lines(raw: str, source_path: str = "") -> list[Exemplar]:
    """One exemplar per valid JSON line; comments, fences, junk are skipped."""
    exemplars: list[Exemplar] = []
    for line_number, line in enumerate(raw.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(_SKIP_PREFIXES):
            continue
        try:
            record = json.loads(stripped)
            exemplar = Exemplar(
                prompt=record["prompt"],
                response=record["response"],
                answer=float(record["en_answer"]),
                problem_type=record.get("problem_type", "general"),
                problem_subtype=record.get("problem_subtype", "general"),
                source_line=line_number,
                source_path=source_path,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            continue
        exemplars.append(exemplar)
    return exemplars


def load_library(path: str | Path, embedder, cache_dir: str | Path | None = None) -> Library:
    """Load and embed a JSONL-in-markdown library file.

    The optional vector cache is keyed by (file content hash, embedder id)
    so a stale cache can never be served for edited content.
    """
    raw = Path(path).read_text(encoding="utf-8")
    exemplars = parse_library_lines(raw, source_path=str(path))
    if not exemplars:
        raise EmptyLibrary(f"no valid exemplar lines in {path}")
    content_hash = hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]

    cache_file = None
    if cache_dir is not None:
        cache_file = Path(cache_dir) / f"vectors-{content_hash}-{embedder.embedder_id}.json"
        if cache_file.exists():
            cached = json.loads(cache_file.read_text(encoding="utf-8"))
            vectors = np.asarray(cached, dtype=np.float64)
            if vectors.shape[0] == len(exemplars):
                return Library(exemplars, vectors, embedder.embedder_id, content_hash)

    vectors = np.vstack(embedder.embed([e.prompt for e in exemplars]))
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(json.dumps(vectors.tolist()), encoding="utf-8")
    return Library(exemplars, vectors, embedder.embedder_id, content_hash)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector dims differ: {a.shape} vs {b.shape}")
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b)) / denom


def mmr_select(
    query_vec: np.ndarray,
    candidates: list[tuple[int, np.ndarray]],
    params: MmrParams,
) -> list[int]:
    """Greedy maximal-marginal-relevance selection.

    Each step picks argmax over the remaining pool of
    ``lambda * sim(cand, query) - (1 - lambda) * max(sim(cand, selected))``.
    The first pick reduces to pure query relevance (the diversity term has
    no selected items to range over). Scores within 1e-9 of the step
    maximum count as tied; ties break toward the lower candidate index.
    """
    if not candidates:
        return []
    ids = [cid for cid, _ in candidates]
    if len(set(ids)) != len(ids):
        raise ValueError("candidate ids must be distinct")
    vectors = [vec for _, vec in candidates]
    for vec in vectors:
        if vec.shape != query_vec.shape:
            raise DimensionMismatch(f"vector dims differ: {vec.shape} vs {query_vec.shape}")

    relevance = [cosine(vec, query_vec) for vec in vectors]
    remaining = list(range(len(candidates)))
    selected: list[int] = []
    while remaining and len(selected) < params.k:
        if not selected:
            scores = {i: relevance[i] for i in remaining}
        else:
            scores = {}
            for i in remaining:
                redundancy = max(cosine(vectors[i], vectors[j]) for j in selected)
                scores[i] = params.lambda_ * relevance[i] - (1.0 - params.lambda_) * redundancy
        top = max(scores.values())
        best = min(i for i in remaining if scores[i] >= top - MMR_TIE_EPS)
        selected.append(best)
        remaining.remove(best)
    return [ids[i] for i in selected]


def coarse_retrieve(
    library: Library,
    query: Task,
    embedder,
    params: MmrParams | None = None,
    type_hint: str | None = None,
    query_text: str | None = None,
) -> list[Exemplar]:
    """Embed the query, MMR-thin the nearest pool, filter by problem type.

    The metadata filter is non-destructive: when the hint matches nothing,
    all MMR picks survive so the reranker is never starved.
    """
    if len(library) == 0:
        raise EmptyLibrary("cannot retrieve from an empty library")
    params = params or MmrParams()

    text = query_text if query_text is not None else query.text
    query_vec = embedder.embed([text])[0]
    similarities = library.vectors @ query_vec
    order = sorted(range(len(library)), key=lambda i: (-similarities[i], i))
    pool = order[: params.fetch_k]

    picked = mmr_select(query_vec, [(i, library.vectors[i]) for i in pool], params)
    candidates = [library.exemplars[i] for i in picked]

    if type_hint:
        matching = [e for e in candidates if e.problem_type == type_hint]
        if matching:
            candidates = matching
    return candidates


def _candidate_lines(candidates: list[Exemplar]) -> str:
    lines = []
    for index, exemplar in enumerate(candidates):
        snippet = " ".join(exemplar.prompt.split())[:200]
        lines.append(
            f"[{index}] type={exemplar.problem_type} subtype={exemplar.problem_subtype} :: {snippet}"
        )
    return "\n".join(lines)


def rerank(
    candidates: list[Exemplar],
    query: Task,
    kind: str,
    backend: ChatBackend,
    template: PromptTemplate,
    model_name: str,
) -> RetrievedSet:
    """LLM rerank of coarse candidates; degrades to the empty signal.

    A malformed reply never aborts the pipeline: the agent simply proceeds
    without exemplars.
    """
    if not candidates:
        return RetrievedSet(kind=kind)
    prompt = template.render(
        query_text=query.text,
        candidates_text=_candidate_lines(candidates),
        slot_count=str(EXEMPLAR_CAP),
    )
    request = ChatRequest(
        role="reranker",
        system_text=template.role_description,
        user_text=prompt,
        model_name=model_name,
    )
    try:
        reply = backend.complete(request)
        picks = _parse_rerank_reply(reply, len(candidates))
    except Exception:
        return RetrievedSet(kind=kind)
    if not picks:
        return RetrievedSet(kind=kind)
    items = tuple(candidates[i] for i in picks[:EXEMPLAR_CAP])
    return RetrievedSet(kind=kind, items=items, empty_signal=False)


def _parse_rerank_reply(reply: str, candidate_count: int) -> list[int]:
    text = reply.strip()
    match = re.search(r"\[.*\]", text, re.DOTALL)
    if match:
        text = match.group(0)
    parsed = json.loads(text)
    if not isinstance(parsed, list):
        raise ValueError("rerank reply must be a JSON array")
    picks: list[int] = []
    for item in parsed:
        if isinstance(item, dict):
            item = item.get("index")
        index = int(item)
        if 0 <= index < candidate_count and index not in picks:
            picks.append(index)
    return picks


# Maps essence keywords to the canonical problem_type labels used in
# library metadata. Best effort only; unmatched essences yield no hint.
_TYPE_HINTS = (
    ("mixed-integer", "Mixed-Integer Linear Programming (MILP)"),
    ("milp", "Mixed-Integer Linear Programming (MILP)"),
    ("integer", "Mixed-Integer Linear Programming (MILP)"),
    ("nonlinear", "Nonlinear Programming (NLP)"),
    ("nlp", "Nonlinear Programming (NLP)"),
    ("linear programming", "Linear Programming (LP)"),
    ("linear program", "Linear Programming (LP)"),
    ("lp", "Linear Programming (LP)"),
)


def type_hint_from_essence(essence: str | None) -> str | None:
    """Keyword-map an advisor essence sentence to a library problem type."""
    if not essence:
        return None
    lowered = essence.lower()
    for keyword, hint in _TYPE_HINTS:
        if keyword in lowered:
            return hint
    return None
