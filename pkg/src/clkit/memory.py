"""Semantic experience memory: flat exact-kNN vector store with
same-sequence prioritization and token-budgeted context formatting.

The corpus scale (a few hundred experiences per run) makes a flat cosine
scan both exact and fast; no approximate index is used.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

PERSIST_VERSION = 1


class DimensionMismatch(ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"embedding dimension {got} != store dimension {expected}")


@dataclass(frozen=True)
class ExperienceRecord:
    """One stored task attempt."""

    task_id: str
    sequence_id: str
    problem_summary: str
    solution_summary: str
    rationale_summary: str
    tool_stats: dict[str, int]
    success: bool
    embedding: tuple[float, ...]
    created_at_step: int

    def __post_init__(self):
        for name in ("problem_summary", "solution_summary", "rationale_summary"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")


@dataclass(frozen=True)
class RetrievalHit:
    record: ExperienceRecord
    record_id: int
    score: float
    same_sequence: bool


def default_token_estimator(text: str) -> int:
    """Documented heuristic: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


class MemoryStore:
    """Single-writer, multi-reader store of experience records.

    Record ids are dense insertion indices (0..n-1) and are stable across
    save/load. ``retrieval_count`` instruments policy checks: memory-disabled
    runs must leave it at zero.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self._records: list[ExperienceRecord] = []
        self._vectors: list[np.ndarray] = []
        self._lock = threading.Lock()
        self.retrieval_count = 0

    def __len__(self) -> int:
        return len(self._records)

    def add_experience(self, record: ExperienceRecord) -> int:
        vec = np.asarray(record.embedding, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(self.dimension, int(vec.size))
        with self._lock:
            self._records.append(record)
            self._vectors.append(vec)
            return len(self._records) - 1

    def record(self, record_id: int) -> ExperienceRecord:
        return self._records[record_id]

    def records(self) -> list[ExperienceRecord]:
        return list(self._records)

    def retrieve(
        self,
        query_embedding: Sequence[float],
        k: int,
        current_sequence_id: str,
        exclude_task_id: str | None = None,
        successes_only: bool = False,
        prioritize_same_sequence: bool = True,
    ) -> list[RetrievalHit]:
        """Exact cosine kNN under the prioritization policy.

        In-sequence records fill up to k slots first (score descending, then
        insertion id), then other sequences backfill. With
        ``prioritize_same_sequence`` off, ranking is by score alone. The
        record of the task currently being attempted is never returned.
        """
        if k < 0:
            raise ValueError("k must be >= 0")
        self.retrieval_count += 1
        if k == 0 or not self._records:
            return []
        query = np.asarray(query_embedding, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise DimensionMismatch(self.dimension, int(query.size))

        hits: list[RetrievalHit] = []
        qnorm = float(np.linalg.norm(query))
        for rid, (rec, vec) in enumerate(zip(self._records, self._vectors)):
            if exclude_task_id is not None and rec.task_id == exclude_task_id:
                continue
            if successes_only and not rec.success:
                continue
            denom = qnorm * float(np.linalg.norm(vec))
            score = float(query @ vec) / denom if denom > 0 else 0.0
            hits.append(
                RetrievalHit(
                    record=rec,
                    record_id=rid,
                    score=score,
                    same_sequence=rec.sequence_id == current_sequence_id,
                )
            )

        order = lambda h: (-h.score, h.record_id)
        if not prioritize_same_sequence:
            return sorted(hits, key=order)[:k]
        same = sorted((h for h in hits if h.same_sequence), key=order)
        other = sorted((h for h in hits if not h.same_sequence), key=order)
        selected = same[:k]
        selected += other[: k - len(selected)]
        return selected

    def save(self, path):
        payload = {
            "version": PERSIST_VERSION,
            "dimension": self.dimension,
            "records": [
                {
                    "task_id": r.task_id,
                    "sequence_id": r.sequence_id,
                    "problem_summary": r.problem_summary,
                    "solution_summary": r.solution_summary,
                    "rationale_summary": r.rationale_summary,
                    "tool_stats": r.tool_stats,
                    "success": r.success,
                    "embedding": list(r.embedding),
                    "created_at_step": r.created_at_step,
                }
                for r in self._records
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "MemoryStore":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("version") != PERSIST_VERSION:
            raise ValueError(f"unsupported memory store version {payload.get('version')!r}")
        store = cls(payload["dimension"])
        for obj in payload["records"]:
            store.add_experience(
                ExperienceRecord(
                    task_id=obj["task_id"],
                    sequence_id=obj["sequence_id"],
                    problem_summary=obj["problem_summary"],
                    solution_summary=obj["solution_summary"],
                    rationale_summary=obj["rationale_summary"],
                    tool_stats=dict(obj["tool_stats"]),
                    success=obj["success"],
                    embedding=tuple(obj["embedding"]),
                    created_at_step=obj["created_at_step"],
                )
            )
        return store


def format_context(
    hits: Sequence[RetrievalHit],
    max_context_tokens: int,
    token_estimator: Callable[[str], int] = default_token_estimator,
) -> str:
    """Render hits in rank order into a context block within the token budget.

    Whole blocks are dropped from the tail (never truncated mid-block) until
    the estimate fits. A zero budget yields the empty string.
    """
    if max_context_tokens < 0:
        raise ValueError("max_context_tokens must be >= 0")
    blocks = []
    for rank, hit in enumerate(hits, start=1):
        rec = hit.record
        blocks.append(
            f"### Past experience {rank}: {rec.task_id} "
            f"(success={str(rec.success).lower()}, relevance={hit.score:.3f})\n"
            f"Problem: {rec.problem_summary}\n"
            f"Solution: {rec.solution_summary}\n"
            f"Rationale: {rec.rationale_summary}\n"
        )
    while blocks and token_estimator("\n".join(blocks)) > max_context_tokens:
        blocks.pop()
    return "\n".join(blocks)
