"""Dual memory: per-task revision history plus a cross-task journal.

Local memory is single-owner per task and never shared. The global pool is
an append-only log (optionally journaled to JSONL) whose appends are
linearized behind one lock; readers always see a prefix-consistent view.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from optagent.errors import OrderViolation
from optagent.types import ExecutionOutcome, MathModel, RevisionTip, SolverProgram


@dataclass(frozen=True)
class RoundEntry:
    """One pipeline round: artifacts, outcome, and any tips that produced them."""

    round_index: int
    model: MathModel | None
    program: SolverProgram | None
    outcome: ExecutionOutcome | None
    model_tip: RevisionTip | None = None
    code_tip: RevisionTip | None = None


class LocalMemory:
    """Append-only per-task round history. Round 0 is the generation phase."""

    def __init__(self, task_id: str):
        self.task_id = task_id
        self.rounds: list[RoundEntry] = []

    def record_round(self, entry: RoundEntry) -> "LocalMemory":
        if entry.round_index != len(self.rounds):
            raise OrderViolation(
                f"expected round {len(self.rounds)}, got {entry.round_index}"
            )
        self.rounds.append(entry)
        return self

    def last_tips(self) -> tuple[RevisionTip | None, RevisionTip | None]:
        """Most recent modeling tip and code tip, scanned independently."""
        model_tip = next(
            (r.model_tip for r in reversed(self.rounds) if r.model_tip is not None), None
        )
        code_tip = next(
            (r.code_tip for r in reversed(self.rounds) if r.code_tip is not None), None
        )
        return model_tip, code_tip

    def last_outcome(self) -> ExecutionOutcome | None:
        for entry in reversed(self.rounds):
            if entry.outcome is not None:
                return entry.outcome
        return None


@dataclass(frozen=True)
class GlobalRecord:
    task_id: str
    agent_role: str
    round: int
    digest: str
    payload: Any

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "agent_role": self.agent_role,
            "round": self.round,
            "digest": self.digest,
            "payload": self.payload,
        }


def _digest(payload: Any) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class GlobalMemory:
    """Cross-task append-only knowledge log.

    Records are never mutated; with a journal path configured every append
    is also written through as one JSONL line.
    """

    def __init__(self, journal_path: str | Path | None = None):
        self._lock = threading.Lock()
        self._records: list[GlobalRecord] = []
        self._journal_path = None if journal_path is None else Path(journal_path)

    def append(self, task_id: str, agent_role: str, round_index: int, payload: Any) -> None:
        record = GlobalRecord(task_id, agent_role, round_index, _digest(payload), payload)
        with self._lock:
            self._records.append(record)
            if self._journal_path is not None:
                with self._journal_path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")

    def read(self) -> list[GlobalRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)
