"""Prompt-poisoning drift analysis: sample unrelated task pairs by
difficulty, generate clean and poisoned solutions, embed both, and
aggregate 1 - cosine drift with confidence intervals per difficulty pair.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sstats

from .dataset import CLDataset, CLTask, DifficultyTier
from .gateway import ChatClient, Embedder, GenerationParams

HIGH_DRIFT_THRESHOLD = 0.3

# Static example diff shown to the model so it replies in unified-diff form.
EXAMPLE_PATCH = """\
--- a/file.py
+++ b/file.py
@@ -1,4 +1,6 @@
 def gcd(a, b):
-    while b:
-        a, b = b, a % b
-    return a
+    if b == 0:
+        return a
+    return gcd(b, a % b)
+
+
@@ -8,3 +10,4 @@ def lcm(a, b):
     if a == 0 or b == 0:
         return 0
     return abs(a * b) // gcd(a, b)
+
"""


class InsufficientPairs(ValueError):
    def __init__(self, available: int, requested: int):
        self.available = available
        self.requested = requested
        super().__init__(f"only {available} eligible pairs available, {requested} requested")


class AllTrialsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class PoisonPairSpec:
    d_src: DifficultyTier
    d_tgt: DifficultyTier
    n_pairs: int
    seed: int = 0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")


@dataclass(frozen=True)
class DriftRecord:
    source_id: str
    target_id: str
    d_src: str
    d_tgt: str
    drift: float
    clean_latency: float
    poisoned_latency: float
    model_name: str


@dataclass(frozen=True)
class DriftGroup:
    d_src: str
    d_tgt: str
    n: int
    mean: float
    ci_lo: float | None
    ci_hi: float | None


@dataclass(frozen=True)
class DriftReport:
    groups: tuple[DriftGroup, ...]
    high_drift_threshold: float = HIGH_DRIFT_THRESHOLD
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "high_drift_threshold": self.high_drift_threshold,
            "groups": [
                {
                    "d_src": g.d_src,
                    "d_tgt": g.d_tgt,
                    "n": g.n,
                    "mean": g.mean,
                    "ci_lo": g.ci_lo,
                    "ci_hi": g.ci_hi,
                }
                for g in self.groups
            ],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        lines = ["d_src,d_tgt,n,mean,ci_lo,ci_hi"]
        for g in self.groups:
            lo = "" if g.ci_lo is None else repr(g.ci_lo)
            hi = "" if g.ci_hi is None else repr(g.ci_hi)
            lines.append(f"{g.d_src},{g.d_tgt},{g.n},{g.mean!r},{lo},{hi}")
        return "\n".join(lines) + "\n"


def unrelated(a: CLTask, b: CLTask, same_repo_dependency_ids: dict | None = None) -> bool:
    """Structural unrelatedness: different repos, or same repo with disjoint
    modified files and no dependency edge either way."""
    if a.base.repo != b.base.repo:
        return True
    if a.modified_files & b.modified_files:
        return False
    if a.instance_id in b.dependencies or b.instance_id in a.dependencies:
        return False
    return True


def sample_pairs(
    dataset: CLDataset, spec: PoisonPairSpec
) -> list[tuple[CLTask, CLTask]]:
    """Seeded sampling without replacement of unrelated (source, target)
    pairs with the requested difficulty tiers."""
    tasks = list(dataset.all_tasks())
    sources = [t for t in tasks if t.base.difficulty is spec.d_src]
    targets = [t for t in tasks if t.base.difficulty is spec.d_tgt]
    candidates = [
        (a, b)
        for a in sources
        for b in targets
        if a.instance_id != b.instance_id and unrelated(a, b)
    ]
    candidates.sort(key=lambda p: (p[0].instance_id, p[1].instance_id))
    if len(candidates) < spec.n_pairs:
        raise InsufficientPairs(len(candidates), spec.n_pairs)
    rng = random.Random(spec.seed)
    return rng.sample(candidates, spec.n_pairs)


def build_task_prompt(task: CLTask, poison: CLTask | None = None, retrieved_context: str = "") -> str:
    """Render the patch-generation prompt for a task.

    With ``poison`` set, the poison task's full prompt plus its gold patch is
    prepended, then the clean target prompt follows (concatenation order:
    poison first, target last).
    """
    if poison is not None:
        return (
            build_task_prompt(poison)
            + "\n<gold_patch>\n"
            + poison.base.patch
            + "\n</gold_patch>\n\n"
            + build_task_prompt(task, retrieved_context=retrieved_context)
        )

    record = task.base
    hints = record.hints_text or "None."
    return (
        "You are given part of a code base and an issue describing a problem "
        "to fix.\nProduce a patch in unified diff format that resolves the "
        "issue.\n\n"
        "<issue>\n"
        f"{record.problem_statement}\n"
        "</issue>\n\n"
        f"Repository context ({record.repo} at commit {record.base_commit}):\n"
        "<code>\n"
        f"{retrieved_context}\n"
        "\n"
        "**Hints (if any from the original issue):**\n"
        f"{hints}\n"
        "</code>\n\n"
        "Below is an example patch file. It lists the affected file names, "
        "the line numbers of each change, and the removed and added lines. "
        "One patch file may modify several files.\n\n"
        "<patch>\n"
        f"{EXAMPLE_PATCH}"
        "</patch>\n\n"
        "Resolve the issue above by replying with a single patch file in the "
        "format shown, ready to apply with git apply.\n\n"
        "Respond below:\n"
    )


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0:
        return 0.0
    return float(va @ vb) / denom


def run_trials(
    pairs: Sequence[tuple[CLTask, CLTask]],
    chat: ChatClient,
    embedder: Embedder,
    params: GenerationParams | None = None,
) -> tuple[list[DriftRecord], list[dict]]:
    """Run one drift trial per (source, target) pair.

    Per-pair failures are recorded without aborting the batch; raises
    AllTrialsFailed only when every pair failed.
    """
    params = params or GenerationParams()
    records: list[DriftRecord] = []
    failures: list[dict] = []
    for source, target in pairs:
        try:
            clean = chat.generate(build_task_prompt(target), params)
            poisoned = chat.generate(build_task_prompt(target, poison=source), params)
            e_clean = embedder.embed(clean.text)
            e_poisoned = embedder.embed(poisoned.text)
            drift = 1.0 - _cosine(e_clean.vector, e_poisoned.vector)
            records.append(
                DriftRecord(
                    source_id=source.instance_id,
                    target_id=target.instance_id,
                    d_src=source.base.difficulty.name,
                    d_tgt=target.base.difficulty.name,
                    drift=drift,
                    clean_latency=clean.latency_seconds,
                    poisoned_latency=poisoned.latency_seconds,
                    model_name=params.model_name,
                )
            )
        except Exception as exc:  # noqa: BLE001 - per-pair isolation is the contract
            failures.append(
                {
                    "source_id": source.instance_id,
                    "target_id": target.instance_id,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    if pairs and not records:
        raise AllTrialsFailed(f"all {len(pairs)} trials failed; first: {failures[0]['error']}")
    return records, failures


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Student-t confidence interval for the mean (n-1 degrees of freedom)."""
    n = len(values)
    if n < 2:
        raise ValueError("t-interval needs n >= 2")
    mean = float(np.mean(values))
    sem = float(np.std(values, ddof=1)) / math.sqrt(n)
    t_crit = float(sstats.t.ppf(0.5 + confidence / 2.0, n - 1))
    return mean - t_crit * sem, mean + t_crit * sem


def aggregate(records: Sequence[DriftRecord]) -> DriftReport:
    """Group drift values by (d_src, d_tgt) with mean and 95% t-interval.

    Single-observation groups report the mean with an absent CI.
    """
    grouped: dict[tuple[str, str], list[float]] = {}
    for rec in records:
        grouped.setdefault((rec.d_src, rec.d_tgt), []).append(rec.drift)

    groups = []
    warnings = []
    for key in sorted(grouped):
        values = grouped[key]
        mean = float(np.mean(values))
        if len(values) >= 2:
            lo, hi = t_interval(values)
        else:
            lo = hi = None
            warnings.append(f"group {key[0]}-{key[1]} has n=1; CI omitted")
        groups.append(
            DriftGroup(d_src=key[0], d_tgt=key[1], n=len(values), mean=mean, ci_lo=lo, ci_hi=hi)
        )
    return DriftReport(groups=tuple(groups), warnings=tuple(warnings))
