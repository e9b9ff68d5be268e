"""Structural-overlap analysis of gold patches: token Jaccard, TF-IDF cosine,
pairwise distributions and difficulty-stratified summaries.
"""

from __future__ import annotations

import enum
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import CLDataset, DifficultyTier

_TOKEN_RE = re.compile(r"[0-9a-z_]+")

HISTOGRAM_BIN_WIDTH = 0.02
N_BINS = 50


class ZeroVector(ValueError):
    """Document has no in-vocabulary tokens; its cosine is scored as 0."""


class SimilarityMode(enum.Enum):
    JACCARD = "jaccard"
    TFIDF_COSINE = "tfidf"


def tokenize(text: str) -> set[str]:
    """Lowercase token set: maximal runs of [a-z0-9_], empties dropped."""
    return set(_TOKEN_RE.findall(text.lower()))


def token_counts(text: str) -> Counter:
    """Raw term counts over the same token rule as :func:`tokenize`."""
    return Counter(_TOKEN_RE.findall(text.lower()))


def jaccard(a: set[str], b: set[str]) -> float:
    """|a ∩ b| / |a ∪ b|; two empty sets score 1.0 by convention."""
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class TfIdfModel:
    """TF-IDF weighting fit on a document corpus.

    tf is the raw term count; idf(t) = ln((1 + N) / (1 + df(t))) + 1, so no
    token weight is ever zero.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    doc_count: int

    @classmethod
    def fit(cls, documents: Sequence[str]) -> "TfIdfModel":
        doc_tokens = [set(token_counts(doc)) for doc in documents]
        vocabulary: dict[str, int] = {}
        for tokens in doc_tokens:
            for token in sorted(tokens):
                if token not in vocabulary:
                    vocabulary[token] = len(vocabulary)
        df = np.zeros(len(vocabulary))
        for tokens in doc_tokens:
            for token in tokens:
                df[vocabulary[token]] += 1
        n = len(documents)
        idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
        return cls(vocabulary=vocabulary, idf=idf, doc_count=n)

    def vector(self, document: str) -> dict[int, float]:
        """Sparse L2-normalized tf·idf vector. Raises ZeroVector if the
        document has no in-vocabulary tokens."""
        weights = {
            self.vocabulary[token]: count * self.idf[self.vocabulary[token]]
            for token, count in token_counts(document).items()
            if token in self.vocabulary
        }
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if norm == 0.0:
            raise ZeroVector("document has no in-vocabulary tokens")
        return {i: w / norm for i, w in weights.items()}


def sparse_cosine(a: dict[int, float], b: dict[int, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return sum(w * b[i] for i, w in a.items() if i in b)


def tfidf_cosine(model: TfIdfModel, doc_a: str, doc_b: str) -> float:
    """Cosine of L2-normalized tf·idf vectors under the fitted model."""
    return sparse_cosine(model.vector(doc_a), model.vector(doc_b))


def _tier_key(a: DifficultyTier, b: DifficultyTier) -> tuple[str, str]:
    # Unordered: Easy-Hard and Hard-Easy land in the same stratum.
    first, second = sorted((a, b), key=lambda t: t.score)
    return (first.name, second.name)


@dataclass
class SimilarityReport:
    mode: SimilarityMode
    mean: float
    pair_count: int
    histogram: list[int]                       # N_BINS fixed-width bins over [0, 1]
    stratified: dict[tuple[str, str], float]   # unordered tier pair -> mean
    stratified_counts: dict[tuple[str, str], int]
    top_pairs: list[tuple[str, str, float]]
    zero_vector_docs: int = 0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "mean": self.mean,
            "pair_count": self.pair_count,
            "bin_width": HISTOGRAM_BIN_WIDTH,
            "histogram": self.histogram,
            "stratified": [
                {
                    "tier_a": key[0],
                    "tier_b": key[1],
                    "mean": mean,
                    "n": self.stratified_counts[key],
                }
                for key, mean in sorted(self.stratified.items())
            ],
            "top_pairs": [
                {"id_a": a, "id_b": b, "score": score} for a, b, score in self.top_pairs
            ],
            "zero_vector_docs": self.zero_vector_docs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        lines = ["section,key_a,key_b,value,n"]
        lines.append(f"mean,,,{self.mean!r},{self.pair_count}")
        for i, count in enumerate(self.histogram):
            lo = i * HISTOGRAM_BIN_WIDTH
            lines.append(f"bin,{lo:.2f},{lo + HISTOGRAM_BIN_WIDTH:.2f},{count},")
        for key, mean in sorted(self.stratified.items()):
            lines.append(f"stratum,{key[0]},{key[1]},{mean!r},{self.stratified_counts[key]}")
        for a, b, score in self.top_pairs:
            lines.append(f"top_pair,{a},{b},{score!r},")
        return "\n".join(lines) + "\n"


def _bin_index(score: float) -> int:
    return min(int(score / HISTOGRAM_BIN_WIDTH), N_BINS - 1)


def pairwise_report(
    dataset: CLDataset,
    mode: SimilarityMode = SimilarityMode.JACCARD,
    text_source: str = "patch",
    top_k: int = 10,
) -> SimilarityReport:
    """Score every unordered task pair in the dataset on gold-patch text.

    ``text_source`` may be "patch" (the anchored default) or
    "problem_statement" for an exploratory mode.
    """
    tasks = list(dataset.all_tasks())
    if not tasks:
        raise ValueError("dataset has no tasks")
    texts = [getattr(t.base, text_source) for t in tasks]
    tiers = [t.base.difficulty for t in tasks]
    ids = [t.instance_id for t in tasks]

    zero_vector_docs = 0
    if mode is SimilarityMode.JACCARD:
        feats: list = [tokenize(text) for text in texts]

        def score(i: int, j: int) -> float:
            return jaccard(feats[i], feats[j])

    else:
        model = TfIdfModel.fit(texts)
        feats = []
        for text in texts:
            try:
                feats.append(model.vector(text))
            except ZeroVector:
                feats.append(None)
                zero_vector_docs += 1

        def score(i: int, j: int) -> float:
            if feats[i] is None or feats[j] is None:
                return 0.0
            return sparse_cosine(feats[i], feats[j])

    histogram = [0] * N_BINS
    total = 0.0
    count = 0
    strata_sum: dict[tuple[str, str], float] = {}
    strata_n: dict[tuple[str, str], int] = {}
    top: list[tuple[float, str, str]] = []

    n = len(tasks)
    for i in range(n):
        for j in range(i + 1, n):
            s = float(score(i, j))
            s = min(max(s, 0.0), 1.0)  # guard FP drift at the boundaries
            total += s
            count += 1
            histogram[_bin_index(s)] += 1
            key = _tier_key(tiers[i], tiers[j])
            strata_sum[key] = strata_sum.get(key, 0.0) + s
            strata_n[key] = strata_n.get(key, 0) + 1
            top.append((s, ids[i], ids[j]))

    top.sort(key=lambda t: (-t[0], t[1], t[2]))
    top_pairs = [(a, b, s) for s, a, b in top[:top_k]]

    return SimilarityReport(
        mode=mode,
        mean=total / count,
        pair_count=count,
        histogram=histogram,
        stratified={k: strata_sum[k] / strata_n[k] for k in strata_sum},
        stratified_counts=strata_n,
        top_pairs=top_pairs,
        zero_vector_docs=zero_vector_docs,
    )
