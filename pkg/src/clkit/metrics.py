"""Continual-learning metric suite over a sparse performance matrix.

The matrix stores success rates a[i][j] (1-based): performance on task j
measured after processing task i, plus a zero-shot row a[0][j] recorded
before any learning. Full scoring needs the lower triangle, the first
superdiagonal and the zero-shot row; every metric checks for exactly the
cells it consumes and fails loudly when they are absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import median
from typing import Iterable, Mapping, Sequence


class MetricError(ValueError):
    """Base class for metric-domain failures."""


class DomainError(MetricError):
    pass


class IncompleteMatrix(MetricError):
    def __init__(self, missing: Sequence[tuple[int, int]], what: str = "cells"):
        self.missing = list(missing)
        shown = ", ".join(f"({i},{j})" for i, j in self.missing[:8])
        more = "" if len(self.missing) <= 8 else f" and {len(self.missing) - 8} more"
        super().__init__(f"missing {what}: {shown}{more}")


class UndefinedMetric(MetricError):
    """Metric has no value (e.g. N < 2); reported as absent, never as 0."""


class NoSuccesses(MetricError):
    """TUE numerator is undefined when no attempt succeeded."""


@dataclass
class PerformanceMatrix:
    """Sparse success-rate matrix plus zero-shot row.

    ``entries`` maps 1-based (i, j) to a value in [0, 1]; ``zero_shot[j-1]``
    holds the pre-learning baseline for task j.
    """

    n_tasks: int
    task_ids: list[str]
    zero_shot: list[float] | None = None
    entries: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_tasks < 1:
            raise DomainError("n_tasks must be >= 1")
        if len(self.task_ids) != self.n_tasks:
            raise DomainError("task_ids length must equal n_tasks")
        if self.zero_shot is not None:
            if len(self.zero_shot) != self.n_tasks:
                raise DomainError("zero_shot row length must equal n_tasks")
            for v in self.zero_shot:
                _check_rate(v)
        for (i, j), v in self.entries.items():
            self._check_index(i, j)
            _check_rate(v)

    def _check_index(self, i: int, j: int):
        if not (1 <= i <= self.n_tasks and 1 <= j <= self.n_tasks):
            raise DomainError(f"index ({i},{j}) out of range for N={self.n_tasks}")

    def set(self, i: int, j: int, value: float):
        self._check_index(i, j)
        _check_rate(value)
        self.entries[(i, j)] = float(value)

    def get(self, i: int, j: int) -> float:
        try:
            return self.entries[(i, j)]
        except KeyError:
            raise IncompleteMatrix([(i, j)]) from None

    def require(self, cells: Iterable[tuple[int, int]]):
        missing = [c for c in cells if c not in self.entries]
        if missing:
            raise IncompleteMatrix(missing)

    def validate_complete(self):
        """Check the full-scoring region: lower triangle + first superdiagonal
        + zero-shot row."""
        cells = [
            (i, j)
            for i in range(1, self.n_tasks + 1)
            for j in range(1, min(i + 1, self.n_tasks) + 1)
        ]
        self.require(cells)
        if self.zero_shot is None:
            raise IncompleteMatrix([(0, j) for j in range(1, self.n_tasks + 1)], "zero-shot row")

    def to_dict(self) -> dict:
        return {
            "n": self.n_tasks,
            "task_ids": list(self.task_ids),
            "zero_shot": self.zero_shot,
            "entries": [
                {"i": i, "j": j, "value": v}
                for (i, j), v in sorted(self.entries.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "PerformanceMatrix":
        return cls(
            n_tasks=obj["n"],
            task_ids=list(obj["task_ids"]),
            zero_shot=list(obj["zero_shot"]) if obj.get("zero_shot") is not None else None,
            entries={(e["i"], e["j"]): float(e["value"]) for e in obj["entries"]},
        )

    @classmethod
    def from_json(cls, text: str) -> "PerformanceMatrix":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """Dense view: one row per learning step (row 0 is zero-shot), blanks
        for absent cells. Values use repr so the round-trip is exact."""
        lines = ["row," + ",".join(self.task_ids)]
        zs = (
            ["" if self.zero_shot is None else repr(v) for v in self.zero_shot]
            if self.zero_shot is not None
            else [""] * self.n_tasks
        )
        lines.append("0," + ",".join(zs))
        for i in range(1, self.n_tasks + 1):
            cells = [
                repr(self.entries[(i, j)]) if (i, j) in self.entries else ""
                for j in range(1, self.n_tasks + 1)
            ]
            lines.append(f"{i}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "PerformanceMatrix":
        lines = [line for line in text.splitlines() if line.strip()]
        header = lines[0].split(",")
        task_ids = header[1:]
        n = len(task_ids)
        zero_shot: list[float] | None = None
        entries: dict[tuple[int, int], float] = {}
        for line in lines[1:]:
            parts = line.split(",")
            i = int(parts[0])
            values = parts[1 : n + 1]
            if i == 0:
                if any(v != "" for v in values):
                    zero_shot = [float(v) for v in values]
            else:
                for j, v in enumerate(values, start=1):
                    if v != "":
                        entries[(i, j)] = float(v)
        return cls(n_tasks=n, task_ids=task_ids, zero_shot=zero_shot, entries=entries)


@dataclass(frozen=True)
class RunTimings:
    """Per-attempt wall-clock and tool-call accounting."""

    attempts: tuple[dict, ...] = ()

    def __post_init__(self):
        for a in self.attempts:
            if a["duration_seconds"] <= 0:
                raise DomainError(f"attempt {a.get('task_id')}: duration must be > 0")

    @classmethod
    def from_attempts(cls, attempts: Iterable[Mapping]) -> "RunTimings":
        return cls(attempts=tuple(dict(a) for a in attempts))


@dataclass(frozen=True)
class ScoreWeights:
    lambda_f: float = 0.5
    lambda_ft: float = 0.5
    lambda_bwt: float = 0.5
    lambda_aulc: float = 0.2
    lambda_tue: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("lambda_f", "lambda_ft", "lambda_bwt", "lambda_aulc", "lambda_tue"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.beta <= 0:
            raise DomainError("beta must be > 0")


@dataclass
class MetricsReport:
    acc: float
    f: float | None
    ft: float | None
    bwt: float | None
    aulc: float | None
    tue: float | None
    cl_p: float
    cl_s: float | None
    cl_f1: float | None
    cl_f_beta: float | None
    cl_score: float | None
    weights: ScoreWeights

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "forgetting": self.f,
            "forward_transfer": self.ft,
            "backward_transfer": self.bwt,
            "aulc": self.aulc,
            "tue": self.tue,
            "cl_plasticity": self.cl_p,
            "cl_stability": self.cl_s,
            "cl_f1": self.cl_f1,
            "cl_f_beta": self.cl_f_beta,
            "cl_score": self.cl_score,
            "weights": {
                "lambda_f": self.weights.lambda_f,
                "lambda_ft": self.weights.lambda_ft,
                "lambda_bwt": self.weights.lambda_bwt,
                "lambda_aulc": self.weights.lambda_aulc,
                "lambda_tue": self.weights.lambda_tue,
                "beta": self.weights.beta,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_markdown(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        rows = [
            ("ACC", self.acc),
            ("F", self.f),
            ("FT", self.ft),
            ("BWT", self.bwt),
            ("AULC", self.aulc),
            ("TUE", self.tue),
            ("CL-P", self.cl_p),
            ("CL-S", self.cl_s),
            ("CL-F1", self.cl_f1),
            (f"CL-F_beta (beta={self.weights.beta:g})", self.cl_f_beta),
            ("CL-Score", self.cl_score),
        ]
        lines = ["| Metric | Value |", "|---|---|"]
        lines += [f"| {name} | {fmt(value)} |" for name, value in rows]
        return "\n".join(lines)


def _check_rate(value: float):
    if not (0.0 <= value <= 1.0):
        raise DomainError(f"success rate {value!r} outside [0, 1]")


def success_rate(pass_count: int, total_count: int) -> float:
    """Per-task success rate pass/total."""
    if total_count < 1:
        raise DomainError("total_count must be >= 1")
    if not (0 <= pass_count <= total_count):
        raise DomainError("pass_count must be within [0, total_count]")
    return pass_count / total_count


def accuracy(m: PerformanceMatrix) -> float:
    """Mean of the final row: average accuracy after learning all tasks."""
    n = m.n_tasks
    m.require((n, j) for j in range(1, n + 1))
    return sum(m.get(n, j) for j in range(1, n + 1)) / n


def forgetting(m: PerformanceMatrix) -> float:
    """Mean drop from each earlier task's best observed rate to its final rate.

    The best observed rate is the max over every stored cell of the column
    (so a column maximized at the final row contributes exactly 0 and the
    metric stays in [0, 1]).
    """
    n = m.n_tasks
    if n < 2:
        raise UndefinedMetric("forgetting requires N >= 2")
    m.require([(n, j) for j in range(1, n)] + [(j, j) for j in range(1, n)])
    total = 0.0
    for j in range(1, n):
        best = max(m.entries[(k, j)] for k in range(1, n + 1) if (k, j) in m.entries)
        total += best - m.get(n, j)
    return total / (n - 1)


def forward_transfer(m: PerformanceMatrix) -> float:
    """Mean superdiagonal gain over the zero-shot baseline."""
    n = m.n_tasks
    if n < 2:
        raise UndefinedMetric("forward transfer requires N >= 2")
    if m.zero_shot is None:
        raise IncompleteMatrix([(0, j) for j in range(2, n + 1)], "zero-shot row")
    m.require((i, i + 1) for i in range(1, n))
    return sum(m.get(i, i + 1) - m.zero_shot[i] for i in range(1, n)) / (n - 1)


def backward_transfer(m: PerformanceMatrix) -> float:
    """Mean final-row change relative to the diagonal."""
    n = m.n_tasks
    if n < 2:
        raise UndefinedMetric("backward transfer requires N >= 2")
    m.require([(i, i) for i in range(1, n)] + [(n, i) for i in range(1, n)])
    return sum(m.get(n, i) - m.get(i, i) for i in range(1, n)) / (n - 1)


def aulc(m: PerformanceMatrix) -> float:
    """Mean running average of the diagonal (area under the learning curve)."""
    n = m.n_tasks
    m.require((i, i) for i in range(1, n + 1))
    total = 0.0
    running = 0.0
    for i in range(1, n + 1):
        running += m.get(i, i)
        total += running / i
    return total / n


def tool_use_efficiency(timings: RunTimings) -> float:
    """median(duration | success) / median(duration | all)."""
    if not timings.attempts:
        raise DomainError("no attempts recorded")
    durations = [a["duration_seconds"] for a in timings.attempts]
    successes = [a["duration_seconds"] for a in timings.attempts if a["success"]]
    if not successes:
        raise NoSuccesses("no successful attempt; TUE undefined")
    return median(successes) / median(durations)


def cl_plasticity(m: PerformanceMatrix) -> float:
    """Mean diagonal: immediate proficiency on each task as it is processed."""
    n = m.n_tasks
    m.require((i, i) for i in range(1, n + 1))
    return sum(m.get(i, i) for i in range(1, n + 1)) / n


def cl_stability(m: PerformanceMatrix) -> float:
    """1 - forgetting: knowledge retention."""
    return 1.0 - forgetting(m)


def cl_f_beta(p: float, s: float, beta: float = 1.0) -> float:
    """Weighted harmonic mean of plasticity and stability; beta > 1 favors
    stability. Returns 0 at the p = s = 0 limit."""
    if not (0.0 <= p <= 1.0 and 0.0 <= s <= 1.0):
        raise DomainError("p and s must lie in [0, 1]")
    if beta <= 0:
        raise DomainError("beta must be > 0")
    denom = beta * beta * p + s
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * p * s / denom


def composite_score(
    m: PerformanceMatrix,
    timings: RunTimings | None = None,
    weights: ScoreWeights | None = None,
) -> MetricsReport:
    """Evaluate the full metric suite and the weighted composite score.

    The composite is ACC - lf*F + lft*FT + lbwt*BWT + laulc*AULC + CL-F_beta,
    with an optional + ltue*TUE term when lambda_tue > 0. Undefined component
    metrics raise rather than silently contributing 0.
    """
    weights = weights or ScoreWeights()
    acc_v = accuracy(m)
    f_v = forgetting(m)
    ft_v = forward_transfer(m)
    bwt_v = backward_transfer(m)
    aulc_v = aulc(m)
    p = cl_plasticity(m)
    s = 1.0 - f_v
    f1 = cl_f_beta(p, s, 1.0)
    fb = cl_f_beta(p, s, weights.beta)

    tue_v: float | None = None
    if timings is not None and timings.attempts:
        try:
            tue_v = tool_use_efficiency(timings)
        except NoSuccesses:
            tue_v = None

    score = (
        acc_v
        - weights.lambda_f * f_v
        + weights.lambda_ft * ft_v
        + weights.lambda_bwt * bwt_v
        + weights.lambda_aulc * aulc_v
        + fb
    )
    if weights.lambda_tue > 0:
        if tue_v is None:
            raise UndefinedMetric("lambda_tue > 0 but TUE is unavailable")
        score += weights.lambda_tue * tue_v

    return MetricsReport(
        acc=acc_v,
        f=f_v,
        ft=ft_v,
        bwt=bwt_v,
        aulc=aulc_v,
        tue=tue_v,
        cl_p=p,
        cl_s=s,
        cl_f1=f1,
        cl_f_beta=fb,
        cl_score=score,
        weights=weights,
    )


def partial_report(
    m: PerformanceMatrix,
    timings: RunTimings | None = None,
    weights: ScoreWeights | None = None,
) -> MetricsReport:
    """Best-effort report: metrics whose cells are absent come back as None.

    Used for runs that only populate part of the matrix (e.g. final-only
    re-evaluation); the composite is omitted unless every component exists.
    """
    weights = weights or ScoreWeights()
    try:
        return composite_score(m, timings, weights)
    except MetricError:
        pass

    def attempt(fn, *args):
        try:
            return fn(*args)
        except MetricError:
            return None

    acc_v = accuracy(m)  # final row is always required
    f_v = attempt(forgetting, m)
    p = attempt(cl_plasticity, m)
    s = None if f_v is None else 1.0 - f_v
    tue_v = None
    if timings is not None and timings.attempts:
        tue_v = attempt(tool_use_efficiency, timings)
    return MetricsReport(
        acc=acc_v,
        f=f_v,
        ft=attempt(forward_transfer, m),
        bwt=attempt(backward_transfer, m),
        aulc=attempt(aulc, m),
        tue=tue_v,
        cl_p=p,
        cl_s=s,
        cl_f1=None if (p is None or s is None) else cl_f_beta(p, s, 1.0),
        cl_f_beta=None if (p is None or s is None) else cl_f_beta(p, s, weights.beta),
        cl_score=None,
        weights=weights,
    )
