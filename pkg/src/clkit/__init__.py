"""clkit: continual-learning evaluation toolkit for resolved-issue corpora."""

__version__ = "0.1.0"

from .dataset import (
    CLDataset,
    CLTask,
    DifficultyTier,
    LearningSequence,
    TaskRecord,
    difficulty_from_annotation,
    parse_corpus,
)
from .diffs import DiffParseError, FileDelta, ParsedDiff, extract_modified_files, parse_unified_diff
from .builder import BuilderConfig, Ordering, build_dataset, compute_stats, order_curriculum
from .metrics import PerformanceMatrix, RunTimings, ScoreWeights, composite_score
from .memory import ExperienceRecord, MemoryStore, RetrievalHit, format_context
from .similarity import SimilarityMode, jaccard, pairwise_report, tfidf_cosine, tokenize

__all__ = [
    "CLDataset",
    "CLTask",
    "DifficultyTier",
    "LearningSequence",
    "TaskRecord",
    "difficulty_from_annotation",
    "parse_corpus",
    "DiffParseError",
    "FileDelta",
    "ParsedDiff",
    "extract_modified_files",
    "parse_unified_diff",
    "BuilderConfig",
    "Ordering",
    "build_dataset",
    "compute_stats",
    "order_curriculum",
    "PerformanceMatrix",
    "RunTimings",
    "ScoreWeights",
    "composite_score",
    "ExperienceRecord",
    "MemoryStore",
    "RetrievalHit",
    "format_context",
    "SimilarityMode",
    "jaccard",
    "pairwise_report",
    "tfidf_cosine",
    "tokenize",
]
