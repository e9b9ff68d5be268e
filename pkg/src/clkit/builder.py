"""Construction of learning sequences: grouping, curriculum ordering,
dependency detection, per-sequence statistics and dataset (de)serialization.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .dataset import (
    CLDataset,
    CLTask,
    DifficultyTier,
    LearningSequence,
    TaskRecord,
)
from .diffs import extract_modified_files


class EmptyDataset(ValueError):
    """No repository survived the minimum-task filter."""


class Ordering(enum.Enum):
    DIFFICULTY_THEN_TIME = "difficulty_then_time"
    TIME_ONLY = "time_only"


@dataclass(frozen=True)
class BuilderConfig:
    min_tasks_per_repo: int = 15
    max_tasks_per_sequence: int | None = 50
    include_test_patch_files: bool = False
    ordering: Ordering = Ordering.DIFFICULTY_THEN_TIME

    def __post_init__(self):
        if self.min_tasks_per_repo < 1:
            raise ValueError("min_tasks_per_repo must be >= 1")
        if (
            self.max_tasks_per_sequence is not None
            and self.max_tasks_per_sequence < self.min_tasks_per_repo
        ):
            raise ValueError("max_tasks_per_sequence must be >= min_tasks_per_repo")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "min_tasks_per_repo": self.min_tasks_per_repo,
                "max_tasks_per_sequence": self.max_tasks_per_sequence,
                "include_test_patch_files": self.include_test_patch_files,
                "ordering": self.ordering.value,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class RepoStats:
    repo: str
    task_count: int
    tier_counts: dict[DifficultyTier, int]
    tasks_with_dependencies: int

    @property
    def dependency_fraction(self) -> float:
        return self.tasks_with_dependencies / self.task_count

    @property
    def dependency_percent(self) -> int:
        return round_half_away(100.0 * self.dependency_fraction)


@dataclass(frozen=True)
class DatasetStats:
    rows: tuple[RepoStats, ...]

    @property
    def total_tasks(self) -> int:
        return sum(r.task_count for r in self.rows)


def round_half_away(x: float) -> int:
    """Round to nearest integer with halves away from zero (table style)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def order_curriculum(
    tasks: Sequence[TaskRecord], ordering: Ordering = Ordering.DIFFICULTY_THEN_TIME
) -> list[TaskRecord]:
    """Stable curriculum sort: difficulty ascending, then creation time, then id.

    TIME_ONLY drops the difficulty key (chronological ablation). The output is
    always a permutation of the input.
    """
    if ordering is Ordering.TIME_ONLY:
        key = lambda t: (t.created_at, t.instance_id)
    else:
        key = lambda t: (t.difficulty.score, t.created_at, t.instance_id)
    return sorted(tasks, key=key)


def detect_dependencies(tasks: Sequence[CLTask]) -> list[CLTask]:
    """Populate dependency lists: B depends on A iff A precedes B in the
    sequence and their modified-file sets intersect."""
    out: list[CLTask] = []
    for j, task in enumerate(tasks):
        deps = [
            earlier.instance_id
            for earlier in tasks[:j]
            if earlier.modified_files & task.modified_files
        ]
        out.append(
            CLTask(
                base=task.base,
                sequence_position=task.sequence_position,
                difficulty_score=task.difficulty_score,
                modified_files=task.modified_files,
                dependencies=tuple(deps),
            )
        )
    return out


def _modified_files(record: TaskRecord, include_test_patch: bool) -> frozenset[str]:
    files = set(extract_modified_files(record.patch))
    if include_test_patch and record.test_patch:
        files |= extract_modified_files(record.test_patch)
    return frozenset(files)


def _corpus_digest(records: Iterable[TaskRecord]) -> str:
    ids = sorted(r.instance_id for r in records)
    return hashlib.sha256("\n".join(ids).encode()).hexdigest()


def build_dataset(records: Sequence[TaskRecord], cfg: BuilderConfig | None = None) -> CLDataset:
    """Group records by repository, filter, curriculum-order, truncate and
    attach dependency metadata. Raises EmptyDataset if no repo survives."""
    cfg = cfg or BuilderConfig()

    by_repo: dict[str, list[TaskRecord]] = {}
    for record in records:
        by_repo.setdefault(record.repo, []).append(record)

    sequences: list[LearningSequence] = []
    for repo, repo_records in by_repo.items():
        if len(repo_records) < cfg.min_tasks_per_repo:
            continue
        ordered = order_curriculum(repo_records, cfg.ordering)
        if cfg.max_tasks_per_sequence is not None:
            ordered = ordered[: cfg.max_tasks_per_sequence]
        tasks = [
            CLTask(
                base=record,
                sequence_position=pos,
                difficulty_score=record.difficulty.score,
                modified_files=_modified_files(record, cfg.include_test_patch_files),
            )
            for pos, record in enumerate(ordered)
        ]
        sequences.append(LearningSequence(repo=repo, tasks=tuple(detect_dependencies(tasks))))

    if not sequences:
        raise EmptyDataset(
            f"no repository has >= {cfg.min_tasks_per_repo} tasks "
            f"({len(by_repo)} repositories seen)"
        )

    # Deterministic assembly: descending task count, then repo name.
    sequences.sort(key=lambda s: (-len(s), s.repo))
    provenance = {
        "source_digest": _corpus_digest(records),
        "config_digest": cfg.digest(),
        "config": {
            "min_tasks_per_repo": cfg.min_tasks_per_repo,
            "max_tasks_per_sequence": cfg.max_tasks_per_sequence,
            "include_test_patch_files": cfg.include_test_patch_files,
            "ordering": cfg.ordering.value,
        },
    }
    return CLDataset(sequences=tuple(sequences), provenance=provenance)


def compute_stats(dataset: CLDataset) -> DatasetStats:
    """Per-repository task counts, tier breakdown and dependency fractions."""
    rows = []
    for seq in dataset.sequences:
        tier_counts = {tier: 0 for tier in DifficultyTier}
        with_deps = 0
        for task in seq.tasks:
            tier_counts[task.base.difficulty] += 1
            if task.dependencies:
                with_deps += 1
        rows.append(
            RepoStats(
                repo=seq.repo,
                task_count=len(seq),
                tier_counts=tier_counts,
                tasks_with_dependencies=with_deps,
            )
        )
    return DatasetStats(rows=tuple(rows))


def dataset_to_dict(dataset: CLDataset) -> dict:
    return {
        "provenance": dataset.provenance,
        "sequences": [
            {
                "repo": seq.repo,
                "tasks": [
                    {
                        **task.base.to_dict(),
                        "continual_learning": {
                            "sequence_position": task.sequence_position,
                            "difficulty_score": task.difficulty_score,
                            "dependencies": list(task.dependencies),
                            "modified_files": sorted(task.modified_files),
                        },
                    }
                    for task in seq.tasks
                ],
            }
            for seq in dataset.sequences
        ],
    }


def dataset_to_json(dataset: CLDataset) -> str:
    return json.dumps(dataset_to_dict(dataset), indent=2)


def dataset_from_dict(obj: dict) -> CLDataset:
    from .dataset import _record_from_obj  # shared record validation

    sequences = []
    for seq_obj in obj["sequences"]:
        tasks = []
        for idx, task_obj in enumerate(seq_obj["tasks"]):
            record = _record_from_obj(task_obj, idx)
            cl = task_obj["continual_learning"]
            tasks.append(
                CLTask(
                    base=record,
                    sequence_position=cl["sequence_position"],
                    difficulty_score=cl["difficulty_score"],
                    modified_files=frozenset(cl["modified_files"]),
                    dependencies=tuple(cl["dependencies"]),
                )
            )
        sequences.append(LearningSequence(repo=seq_obj["repo"], tasks=tuple(tasks)))
    return CLDataset(sequences=tuple(sequences), provenance=obj.get("provenance", {}))


def dataset_from_json(text: str) -> CLDataset:
    return dataset_from_dict(json.loads(text))


def load_dataset(path) -> CLDataset:
    with open(path, encoding="utf-8") as fh:
        return dataset_from_json(fh.read())


def stats_table(stats: DatasetStats) -> str:
    """Render the per-sequence statistics as a Markdown table."""
    header = (
        "| Repository | Tasks | Easy (<15m) | Medium (15m-1h) | Hard (1-4h) "
        "| Very Hard (>4h) | Tasks w/ Dependencies (%) |"
    )
    sep = "|---|---|---|---|---|---|---|"
    lines = [header, sep]
    for row in stats.rows:
        lines.append(
            f"| {row.repo} | {row.task_count} "
            f"| {row.tier_counts[DifficultyTier.EASY]} "
            f"| {row.tier_counts[DifficultyTier.MEDIUM]} "
            f"| {row.tier_counts[DifficultyTier.HARD]} "
            f"| {row.tier_counts[DifficultyTier.VERY_HARD]} "
            f"| {row.tasks_with_dependencies} ({row.dependency_percent}%) |"
        )
    return "\n".join(lines)


def stats_to_csv(stats: DatasetStats) -> str:
    lines = ["repo,tasks,easy,medium,hard,very_hard,tasks_with_dependencies,dependency_percent"]
    for row in stats.rows:
        lines.append(
            f"{row.repo},{row.task_count},"
            f"{row.tier_counts[DifficultyTier.EASY]},"
            f"{row.tier_counts[DifficultyTier.MEDIUM]},"
            f"{row.tier_counts[DifficultyTier.HARD]},"
            f"{row.tier_counts[DifficultyTier.VERY_HARD]},"
            f"{row.tasks_with_dependencies},{row.dependency_percent}"
        )
    return "\n".join(lines) + "\n"
