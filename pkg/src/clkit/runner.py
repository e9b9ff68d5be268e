"""Sequential evaluation protocol: drive a pluggable agent adapter through a
learning sequence, populate the performance matrix (zero-shot row, diagonal
attempts, superdiagonal previews, lower-triangle re-evaluations), manage the
experience memory, and emit reports.

Test execution is out of scope: grading either ingests externally produced
per-test pass/fail results or falls back to a clearly-labeled
patch-similarity heuristic.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Protocol

from .dataset import CLTask, LearningSequence
from .drift import build_task_prompt
from .gateway import ChatClient, Embedder, GenerationParams
from .memory import ExperienceRecord, MemoryStore, format_context
from .metrics import (
    MetricsReport,
    PerformanceMatrix,
    RunTimings,
    ScoreWeights,
    partial_report,
)
from .similarity import jaccard, tokenize


class MissingResults(KeyError):
    def __init__(self, task_id: str, test_id: str | None = None):
        self.task_id = task_id
        self.test_id = test_id
        what = f"test {test_id!r} of task {task_id!r}" if test_id else f"task {task_id!r}"
        super().__init__(f"no external result for {what}")


class ReevalPolicy(enum.Enum):
    AFTER_EVERY_TASK = "after_every_task"
    FINAL_ONLY = "final_only"


class GraderMode(enum.Enum):
    INGEST_RESULTS = "ingest_results"
    PATCH_SIMILARITY = "patch_similarity"


@dataclass(frozen=True)
class RunConfig:
    memory_enabled: bool = True
    k_memories: int = 5
    max_context_tokens: int = 2000
    reeval_policy: ReevalPolicy = ReevalPolicy.AFTER_EVERY_TASK
    grader: GraderMode = GraderMode.PATCH_SIMILARITY
    patch_similarity_threshold: float = 0.5
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.k_memories < 0:
            raise ValueError("k_memories must be >= 0")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "memory_enabled": self.memory_enabled,
                "k_memories": self.k_memories,
                "max_context_tokens": self.max_context_tokens,
                "reeval_policy": self.reeval_policy.value,
                "grader": self.grader.value,
                "patch_similarity_threshold": self.patch_similarity_threshold,
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class AgentOutput:
    """What an adapter returns for one solve call.

    Adapters may self-grade by setting ``rate`` (a success rate in [0, 1]);
    otherwise the configured grader scores ``patch`` against the task.
    """

    patch: str
    duration_seconds: float = 1.0
    tool_calls: int = 0
    rate: float | None = None


@dataclass(frozen=True)
class AttemptResult:
    task_id: str
    produced_patch: str
    pass_count: int
    total_count: int
    duration_seconds: float
    tool_calls: int
    success: bool
    error: str | None = None

    @property
    def success_rate(self) -> float:
        return self.pass_count / self.total_count


class AgentAdapter(Protocol):
    """Pluggable agent interface.

    ``step`` is the 1-based index of the task currently being learned (0 for
    zero-shot evaluations) and ``phase`` is one of "zero_shot", "attempt",
    "next_eval", "reeval".
    """

    def solve(self, task: CLTask, context_text: str, step: int, phase: str) -> AgentOutput: ...


def grade(
    produced_patch: str,
    task: CLTask,
    mode: GraderMode,
    results: dict | None = None,
    threshold: float = 0.5,
) -> tuple[int, int]:
    """Score a produced patch as (pass_count, total_count).

    INGEST_RESULTS counts externally reported passes over the union of
    fail-to-pass and pass-to-pass tests. PATCH_SIMILARITY is a non-
    authoritative smoke-test heuristic: 1/1 iff the token Jaccard between the
    produced and gold patch reaches the threshold, else 0/1.
    """
    record = task.base
    if mode is GraderMode.INGEST_RESULTS:
        if results is None or task.instance_id not in results:
            raise MissingResults(task.instance_id)
        per_test = results[task.instance_id]
        tests = list(record.fail_to_pass) + [
            t for t in record.pass_to_pass if t not in record.fail_to_pass
        ]
        passed = 0
        for test_id in tests:
            if test_id not in per_test:
                raise MissingResults(task.instance_id, test_id)
            if per_test[test_id] == "pass":
                passed += 1
        return passed, len(tests)

    score = jaccard(tokenize(produced_patch), tokenize(record.patch))
    return (1, 1) if score >= threshold else (0, 1)


@dataclass
class RunResult:
    matrix: PerformanceMatrix
    timings: RunTimings
    memory: MemoryStore | None
    attempts: list[AttemptResult]
    config_digest: str
    seed: int


class SequenceRunner:
    """Executes the sequential protocol for one learning sequence."""

    def __init__(
        self,
        agent: AgentAdapter,
        cfg: RunConfig,
        embedder: Embedder | None = None,
        results: dict | None = None,
        memory: MemoryStore | None = None,
    ):
        if cfg.memory_enabled and embedder is None:
            raise ValueError("memory_enabled requires an embedder")
        self.agent = agent
        self.cfg = cfg
        self.embedder = embedder
        self.results = results
        self.memory = memory or (MemoryStore(embedder.dimension) if embedder else None)
        self._timings: list[dict] = []

    def _call_agent(self, task: CLTask, context: str, step: int, phase: str) -> AttemptResult:
        start = time.monotonic()
        try:
            out = self.agent.solve(task, context, step, phase)
        except Exception as exc:  # noqa: BLE001 - agent failures score 0, per contract
            elapsed = max(time.monotonic() - start, 1e-6)
            return AttemptResult(
                task_id=task.instance_id,
                produced_patch="",
                pass_count=0,
                total_count=1,
                duration_seconds=elapsed,
                tool_calls=0,
                success=False,
                error=f"{type(exc).__name__}: {exc}",
            )
        if out.rate is not None:
            if not (0.0 <= out.rate <= 1.0):
                raise ValueError(f"agent-reported rate {out.rate!r} outside [0, 1]")
            # Exact: float division of the exact integer ratio reproduces the
            # original float bit-for-bit.
            frac = Fraction(out.rate)
            passed, total = frac.numerator, frac.denominator
        else:
            passed, total = grade(
                out.patch,
                task,
                self.cfg.grader,
                results=self.results,
                threshold=self.cfg.patch_similarity_threshold,
            )
        result = AttemptResult(
            task_id=task.instance_id,
            produced_patch=out.patch,
            pass_count=passed,
            total_count=total,
            duration_seconds=out.duration_seconds,
            tool_calls=out.tool_calls,
            success=passed == total,
        )
        self._timings.append(
            {
                "task_id": task.instance_id,
                "duration_seconds": result.duration_seconds,
                "success": result.success,
                "tool_calls": result.tool_calls,
                "phase": phase,
            }
        )
        return result

    def _context_for(self, task: CLTask, repo: str) -> str:
        # Memory-disabled runs must never touch retrieval.
        if not self.cfg.memory_enabled:
            return ""
        query_text = task.base.problem_statement + "\n" + (task.base.hints_text or "")
        query = self.embedder.embed(query_text).vector
        hits = self.memory.retrieve(
            query,
            self.cfg.k_memories,
            current_sequence_id=repo,
            exclude_task_id=task.instance_id,
        )
        return format_context(hits, self.cfg.max_context_tokens)

    def _store_experience(self, task: CLTask, attempt: AttemptResult, step: int):
        solution = attempt.produced_patch.strip() or "(no patch produced)"
        embedding = self.embedder.embed(
            task.base.problem_statement + "\n" + (task.base.hints_text or "")
        ).vector
        outcome = "resolved" if attempt.success else "not resolved"
        self.memory.add_experience(
            ExperienceRecord(
                task_id=task.instance_id,
                sequence_id=task.base.repo,
                problem_summary=_clip(task.base.problem_statement, 400),
                solution_summary=_clip(solution, 400),
                rationale_summary=(
                    f"{outcome}: {attempt.pass_count}/{attempt.total_count} tests passing "
                    f"after {attempt.tool_calls} tool calls"
                ),
                tool_stats={"tool_calls": attempt.tool_calls},
                success=attempt.success,
                embedding=embedding,
                created_at_step=step,
            )
        )

    def run(self, seq: LearningSequence) -> RunResult:
        n = len(seq)
        matrix = PerformanceMatrix(
            n_tasks=n, task_ids=[t.instance_id for t in seq.tasks], zero_shot=None
        )

        # Zero-shot row: before any learning, memory disabled.
        zero_shot = []
        for task in seq.tasks:
            result = self._call_agent(task, "", 0, "zero_shot")
            zero_shot.append(result.success_rate)
        matrix.zero_shot = zero_shot

        attempts: list[AttemptResult] = []
        for i, task in enumerate(seq.tasks, start=1):
            context = self._context_for(task, seq.repo)
            attempt = self._call_agent(task, context, i, "attempt")
            attempts.append(attempt)
            matrix.set(i, i, attempt.success_rate)

            if self.cfg.memory_enabled:
                self._store_experience(task, attempt, i)

            # Superdiagonal preview of the next unseen task, after task i's
            # experience is in memory.
            if i < n:
                nxt = seq.tasks[i]
                result = self._call_agent(nxt, self._context_for(nxt, seq.repo), i, "next_eval")
                matrix.set(i, i + 1, result.success_rate)

            if self.cfg.reeval_policy is ReevalPolicy.AFTER_EVERY_TASK:
                for j in range(1, i):
                    prev = seq.tasks[j - 1]
                    result = self._call_agent(
                        prev, self._context_for(prev, seq.repo), i, "reeval"
                    )
                    matrix.set(i, j, result.success_rate)

        if self.cfg.reeval_policy is ReevalPolicy.FINAL_ONLY:
            for j in range(1, n):
                prev = seq.tasks[j - 1]
                result = self._call_agent(prev, self._context_for(prev, seq.repo), n, "reeval")
                matrix.set(n, j, result.success_rate)

        if self.cfg.reeval_policy is ReevalPolicy.AFTER_EVERY_TASK:
            matrix.validate_complete()

        return RunResult(
            matrix=matrix,
            timings=RunTimings.from_attempts(self._timings),
            memory=self.memory,
            attempts=attempts,
            config_digest=self.cfg.digest(),
            seed=self.cfg.seed,
        )


def run_sequence(
    seq: LearningSequence,
    agent: AgentAdapter,
    cfg: RunConfig,
    embedder: Embedder | None = None,
    results: dict | None = None,
    memory: MemoryStore | None = None,
) -> RunResult:
    """Run the full sequential protocol; see SequenceRunner."""
    return SequenceRunner(agent, cfg, embedder=embedder, results=results, memory=memory).run(seq)


def _clip(text: str, limit: int) -> str:
    text = text.strip()
    return text if len(text) <= limit else text[: limit - 3] + "..."


class GoldPatchAgent:
    """Oracle adapter: always emits the task's gold patch."""

    def solve(self, task, context_text, step, phase):
        return AgentOutput(patch=task.base.patch, duration_seconds=1.0, tool_calls=1)


class FailingAgent:
    """Adversarial adapter: never produces a useful patch."""

    def solve(self, task, context_text, step, phase):
        return AgentOutput(patch="", duration_seconds=1.0, tool_calls=0)


class ScheduleAgent:
    """Scripted adapter replaying a programmed performance schedule.

    ``schedule`` maps (step, task_position) with 1-based indices to a success
    rate; step 0 is the zero-shot row.
    """

    def __init__(self, schedule: dict[tuple[int, int], float], sequence: LearningSequence):
        self.schedule = schedule
        self._positions = {t.instance_id: t.sequence_position + 1 for t in sequence.tasks}

    def solve(self, task, context_text, step, phase):
        rate = self.schedule[(step, self._positions[task.instance_id])]
        return AgentOutput(patch="", duration_seconds=1.0, tool_calls=0, rate=rate)


class LLMAgent:
    """Adapter that asks a chat model for a patch using the standard prompt."""

    def __init__(self, chat: ChatClient, params: GenerationParams | None = None):
        self.chat = chat
        self.params = params or GenerationParams()

    def solve(self, task, context_text, step, phase):
        prompt = build_task_prompt(task, retrieved_context=context_text)
        result = self.chat.generate(prompt, self.params)
        return AgentOutput(
            patch=result.text,
            duration_seconds=max(result.latency_seconds, 1e-6),
            tool_calls=1,
        )


def metrics_for_run(
    result: RunResult, weights: ScoreWeights | None = None
) -> MetricsReport:
    """Metric suite for a finished run; partial when the matrix is partial."""
    return partial_report(result.matrix, result.timings, weights)


def emit_reports(
    result: RunResult,
    out_dir,
    cfg: RunConfig,
    weights: ScoreWeights | None = None,
    render_figures: bool = True,
) -> list[Path]:
    """Write matrix (JSON + CSV), metrics (JSON + Markdown), run metadata and
    figures into ``out_dir``. Every file embeds the config digest and seed via
    run_meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def write(name: str, text: str) -> Path:
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
        return path

    write("matrix.json", result.matrix.to_json())
    write("matrix.csv", result.matrix.to_csv())

    report = metrics_for_run(result, weights)
    write("metrics.json", report.to_json())
    write(
        "metrics.md",
        f"# Run metrics\n\nconfig digest: `{result.config_digest}`  \n"
        f"seed: {result.seed}\n\n{report.to_markdown()}\n",
    )
    write(
        "run_meta.json",
        json.dumps(
            {
                "config_digest": result.config_digest,
                "seed": result.seed,
                "n_tasks": result.matrix.n_tasks,
                "attempt_count": len(result.timings.attempts),
                "memory_size": len(result.memory) if result.memory is not None else 0,
            },
            indent=2,
        ),
    )
    write(
        "timings.json",
        json.dumps(list(result.timings.attempts), indent=2),
    )

    if render_figures:
        from . import plots

        written.append(plots.matrix_heatmap(result.matrix, out / "matrix.png"))
        written.append(plots.learning_curve(result.matrix, out / "learning_curve.png"))
    return written
