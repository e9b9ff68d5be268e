"""Domain types for resolved-issue task corpora, plus ingestion and validation.

Source records follow the verified-issue-corpus schema: JSON array or
JSON-lines of objects carrying ``instance_id``, ``repo``, ``base_commit``,
``created_at``, ``problem_statement``, ``hints_text``, ``patch``,
``test_patch``, ``FAIL_TO_PASS``, ``PASS_TO_PASS`` and ``difficulty``.
Unknown fields are ignored so the toolkit tolerates schema growth.
"""

from __future__ import annotations

import enum
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable

from .diffs import DiffParseError, parse_unified_diff


class CorpusError(ValueError):
    """Base class for corpus ingestion failures."""


class MalformedRecord(CorpusError):
    def __init__(self, index: int, fieldname: str, reason: str = "missing or ill-typed"):
        self.index = index
        self.field = fieldname
        super().__init__(f"record {index}: field {fieldname!r} {reason}")


class DuplicateInstanceId(CorpusError):
    def __init__(self, instance_id: str):
        self.instance_id = instance_id
        super().__init__(f"duplicate instance_id {instance_id!r}")


class UnknownDifficulty(CorpusError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown difficulty annotation {label!r}")


class DifficultyTier(enum.Enum):
    """Human fix-time buckets, ordinal 1 (easiest) through 4."""

    EASY = 1
    MEDIUM = 2
    HARD = 3
    VERY_HARD = 4

    @property
    def score(self) -> int:
        return self.value

    @property
    def label(self) -> str:
        return _TIER_LABELS[self]


_TIER_LABELS = {
    DifficultyTier.EASY: "<15 min",
    DifficultyTier.MEDIUM: "15 min - 1 hr",
    DifficultyTier.HARD: "1-4 hr",
    DifficultyTier.VERY_HARD: ">4 hr",
}

# Canonical form: lowercase with all whitespace removed.
_DIFFICULTY_MAP = {
    "<15min": DifficultyTier.EASY,
    "15min-1hr": DifficultyTier.MEDIUM,
    "1-4hr": DifficultyTier.HARD,
    ">4hr": DifficultyTier.VERY_HARD,
}

_REPO_RE = re.compile(r"^[^/\s]+/[^/\s]+$")


def difficulty_from_annotation(label: str) -> DifficultyTier:
    """Map a fix-time category string to its tier, case/whitespace-insensitive."""
    key = re.sub(r"\s+", "", str(label)).lower()
    try:
        return _DIFFICULTY_MAP[key]
    except KeyError:
        raise UnknownDifficulty(label) from None


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 / ISO 8601 timestamp, normalized to UTC.

    Naive timestamps are treated as UTC so ordering stays deterministic.
    """
    text = str(value).strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class TaskRecord:
    """One verified issue instance from the source corpus."""

    instance_id: str
    repo: str
    base_commit: str
    created_at: datetime
    problem_statement: str
    hints_text: str | None
    patch: str
    test_patch: str
    fail_to_pass: tuple[str, ...]
    pass_to_pass: tuple[str, ...]
    difficulty: DifficultyTier

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "repo": self.repo,
            "base_commit": self.base_commit,
            "created_at": self.created_at.isoformat().replace("+00:00", "Z"),
            "problem_statement": self.problem_statement,
            "hints_text": self.hints_text,
            "patch": self.patch,
            "test_patch": self.test_patch,
            "FAIL_TO_PASS": list(self.fail_to_pass),
            "PASS_TO_PASS": list(self.pass_to_pass),
            "difficulty": self.difficulty.label,
        }


@dataclass(frozen=True)
class CLTask:
    """A task embedded in a learning sequence with its continual-learning context."""

    base: TaskRecord
    sequence_position: int
    difficulty_score: int
    modified_files: frozenset[str]
    dependencies: tuple[str, ...] = ()

    @property
    def instance_id(self) -> str:
        return self.base.instance_id


@dataclass(frozen=True)
class LearningSequence:
    """Ordered tasks from one repository, the unit of continual-learning evaluation."""

    repo: str
    tasks: tuple[CLTask, ...]

    def __post_init__(self):
        for pos, task in enumerate(self.tasks):
            if task.sequence_position != pos:
                raise ValueError(
                    f"sequence {self.repo}: task {task.instance_id} at index {pos} "
                    f"claims position {task.sequence_position}"
                )

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class CLDataset:
    """All learning sequences plus provenance digests of source and config."""

    sequences: tuple[LearningSequence, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        repos = [s.repo for s in self.sequences]
        if len(repos) != len(set(repos)):
            raise ValueError("sequences must come from pairwise distinct repositories")

    @property
    def total_tasks(self) -> int:
        return sum(len(s) for s in self.sequences)

    def all_tasks(self) -> Iterable[CLTask]:
        for seq in self.sequences:
            yield from seq.tasks


def _string_list(value, index: int, name: str) -> tuple[str, ...]:
    # The source corpus stores test lists either as JSON arrays or as
    # JSON-encoded strings; accept both.
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise MalformedRecord(index, name, "is not a JSON list") from None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedRecord(index, name, "is not a list of strings")
    return tuple(value)


def _record_from_obj(obj: dict, index: int) -> TaskRecord:
    def need(name: str) -> object:
        if name not in obj or obj[name] is None:
            raise MalformedRecord(index, name)
        return obj[name]

    def need_str(name: str) -> str:
        value = need(name)
        if not isinstance(value, str):
            raise MalformedRecord(index, name)
        return value

    instance_id = need_str("instance_id")
    if not instance_id:
        raise MalformedRecord(index, "instance_id", "is empty")

    repo = need_str("repo")
    if not _REPO_RE.match(repo):
        raise MalformedRecord(index, "repo", 'does not match "owner/name"')

    try:
        created_at = parse_timestamp(need_str("created_at"))
    except ValueError:
        raise MalformedRecord(index, "created_at", "is not a valid timestamp") from None

    patch = need_str("patch")
    if not patch.strip():
        raise MalformedRecord(index, "patch", "is empty")
    try:
        parse_unified_diff(patch)
    except DiffParseError as exc:
        raise MalformedRecord(index, "patch", f"is not a parseable diff ({exc})") from None

    fail_to_pass = _string_list(need("FAIL_TO_PASS"), index, "FAIL_TO_PASS")
    if not fail_to_pass:
        raise MalformedRecord(index, "FAIL_TO_PASS", "is empty")
    pass_to_pass = _string_list(obj.get("PASS_TO_PASS", []), index, "PASS_TO_PASS")

    hints = obj.get("hints_text")
    if hints is not None and not isinstance(hints, str):
        raise MalformedRecord(index, "hints_text")

    try:
        difficulty = difficulty_from_annotation(need_str("difficulty"))
    except UnknownDifficulty:
        raise

    return TaskRecord(
        instance_id=instance_id,
        repo=repo,
        base_commit=need_str("base_commit"),
        created_at=created_at,
        problem_statement=need_str("problem_statement"),
        hints_text=hints,
        patch=patch,
        test_patch=need_str("test_patch") if "test_patch" in obj else "",
        fail_to_pass=fail_to_pass,
        pass_to_pass=pass_to_pass,
        difficulty=difficulty,
    )


def parse_corpus(source: str | bytes | IO) -> list[TaskRecord]:
    """Parse a JSON array or JSON-lines stream of corpus records.

    Order is preserved and unknown fields are ignored. Raises MalformedRecord,
    DuplicateInstanceId or UnknownDifficulty on invalid input.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    if isinstance(text, bytes):
        text = text.decode("utf-8")

    text = text.strip()
    if not text:
        return []

    if text.startswith("["):
        objs = json.loads(text)
        if not isinstance(objs, list):
            raise MalformedRecord(0, "<root>", "top-level JSON is not an array")
    else:
        objs = [json.loads(line) for line in io.StringIO(text) if line.strip()]

    records: list[TaskRecord] = []
    seen: set[str] = set()
    for index, obj in enumerate(objs):
        if not isinstance(obj, dict):
            raise MalformedRecord(index, "<record>", "is not a JSON object")
        record = _record_from_obj(obj, index)
        if record.instance_id in seen:
            raise DuplicateInstanceId(record.instance_id)
        seen.add(record.instance_id)
        records.append(record)
    return records


def serialize_corpus(records: Iterable[TaskRecord]) -> str:
    """Serialize records back to a JSON array (round-trips through parse_corpus)."""
    return json.dumps([r.to_dict() for r in records], indent=2)
