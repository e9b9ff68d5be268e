"""Acceptance suite: one test class per release criterion.

Criteria 1 and 2 need the public verified corpus with difficulty
annotations, which is not bundled with the repository. Point the
CLKIT_VERIFIED_CORPUS environment variable at the corpus JSON file to run
them; without it they skip with an explanatory message.
"""

import json
import math
import os
import random
import statistics
import time

import pytest

from clkit.builder import BuilderConfig, build_dataset, compute_stats
from clkit.dataset import DifficultyTier, parse_corpus
from clkit.drift import PoisonPairSpec, aggregate, run_trials, sample_pairs, t_interval
from clkit.gateway import MockChatClient, MockEmbedder
from clkit.memory import MemoryStore
from clkit.metrics import (
    PerformanceMatrix,
    ScoreWeights,
    accuracy,
    aulc,
    backward_transfer,
    cl_f_beta,
    cl_plasticity,
    cl_stability,
    composite_score,
    forgetting,
    forward_transfer,
)
from clkit.runner import (
    GoldPatchAgent,
    GraderMode,
    RunConfig,
    ScheduleAgent,
    SequenceRunner,
    metrics_for_run,
    run_sequence,
)
from clkit.similarity import SimilarityMode, pairwise_report

import oracles
from conftest import make_record
from test_memory import brute_force_knn, make_experience, DIM
from test_runner import mstar_schedule, sequence_of

CORPUS_ENV = "CLKIT_VERIFIED_CORPUS"
SKIP_REASON = (
    f"set {CORPUS_ENV} to the path of the verified corpus JSON "
    "(difficulty-annotated resolved-issue records) to run this criterion"
)

# Reference per-sequence statistics for the verified corpus:
# repo -> (tasks, easy, medium, hard, very hard, tasks with dependencies)
REFERENCE_ROWS = {
    "django/django": (50, 50, 0, 0, 0, 25),
    "sympy/sympy": (50, 25, 25, 0, 0, 12),
    "sphinx-doc/sphinx": (44, 22, 17, 4, 1, 23),
    "matplotlib/matplotlib": (34, 15, 19, 0, 0, 13),
    "scikit-learn/scikit-learn": (32, 13, 18, 1, 0, 4),
    "astropy/astropy": (22, 4, 15, 3, 0, 3),
    "pydata/xarray": (22, 5, 15, 1, 1, 13),
    "pytest-dev/pytest": (19, 8, 8, 3, 0, 7),
}

TIERS = (
    DifficultyTier.EASY,
    DifficultyTier.MEDIUM,
    DifficultyTier.HARD,
    DifficultyTier.VERY_HARD,
)


def announce(criterion, ok=True):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="module")
def verified_dataset():
    path = os.environ.get(CORPUS_ENV)
    if not path:
        pytest.skip(SKIP_REASON)
    start = time.monotonic()
    with open(path, encoding="utf-8") as fh:
        records = parse_corpus(fh)
    dataset = build_dataset(records, BuilderConfig())
    return dataset, time.monotonic() - start


class TestCriterion1DatasetReconstruction:
    def test_sequence_and_task_counts(self, verified_dataset):
        dataset, elapsed = verified_dataset
        assert elapsed < 60.0, f"build took {elapsed:.1f}s, budget is 60s"
        assert len(dataset.sequences) == 8
        assert dataset.total_tasks == 273
        by_repo = {s.repo: len(s) for s in dataset.sequences}
        assert by_repo == {repo: row[0] for repo, row in REFERENCE_ROWS.items()}
        announce(1)

    def test_tier_and_dependency_cells_within_tolerance(self, verified_dataset):
        dataset, _ = verified_dataset
        stats = compute_stats(dataset)
        for row in stats.rows:
            expected = REFERENCE_ROWS[row.repo]
            for tier, want in zip(TIERS, expected[1:5]):
                got = row.tier_counts.get(tier, 0)
                assert abs(got - want) <= 2, (
                    f"{row.repo} {tier.name}: got {got}, reference {want}"
                )
            assert abs(row.tasks_with_dependencies - expected[5]) <= 2, (
                f"{row.repo} dependencies: got {row.tasks_with_dependencies}, "
                f"reference {expected[5]}"
            )
        announce(1)


class TestCriterion2SimilarityCalibration:
    def test_corpus_similarity_ranges(self, verified_dataset):
        dataset, _ = verified_dataset
        start = time.monotonic()
        jac = pairwise_report(dataset, SimilarityMode.JACCARD)
        cos = pairwise_report(dataset, SimilarityMode.TFIDF_COSINE)
        elapsed = time.monotonic() - start
        assert elapsed < 300.0, f"similarity pass took {elapsed:.0f}s, budget is 5 min"
        assert 0.08 <= jac.mean <= 0.14, f"mean Jaccard {jac.mean:.4f} outside [0.08, 0.14]"
        assert 0.14 <= cos.mean <= 0.22, f"mean cosine {cos.mean:.4f} outside [0.14, 0.22]"
        easy_easy = jac.stratified[(DifficultyTier.EASY, DifficultyTier.EASY)]
        easy_hard = jac.stratified[(DifficultyTier.EASY, DifficultyTier.HARD)]
        assert easy_easy > easy_hard
        announce(2)


MSTAR_EXPECTED = {
    "acc": 0.6667,
    "f": 0.35,
    "ft": 0.15,
    "bwt": -0.35,
    "aulc": 0.9333,
    "cl_p": 0.9,
    "cl_s": 0.65,
    "cl_f1": 0.7548,
    "cl_f2": 0.6882,
    "cl_score": 1.3331,
}


def random_region_matrix(rng, n):
    """A matrix with the protocol's stored region: zero-shot row, lower
    triangle and first superdiagonal, uniform values in [0, 1]."""
    m = PerformanceMatrix(
        n_tasks=n,
        task_ids=[f"t{k}" for k in range(n)],
        zero_shot=[rng.random() for _ in range(n)],
    )
    for i in range(1, n + 1):
        for j in range(1, min(i + 1, n) + 1):
            m.set(i, j, rng.random())
    return m


class TestCriterion3MetricsOracle:
    def engine_values(self, m):
        p = cl_plasticity(m)
        s = cl_stability(m)
        return {
            "acc": accuracy(m),
            "f": forgetting(m),
            "ft": forward_transfer(m),
            "bwt": backward_transfer(m),
            "aulc": aulc(m),
            "cl_p": p,
            "cl_s": s,
            "cl_f1": cl_f_beta(p, s, 1.0),
            "cl_f2": cl_f_beta(p, s, 2.0),
            "cl_score": composite_score(m, weights=ScoreWeights()).cl_score,
        }

    def test_reference_matrix_engine(self, mstar):
        got = self.engine_values(mstar)
        for key, want in MSTAR_EXPECTED.items():
            assert got[key] == pytest.approx(want, abs=1e-3), key
        announce(3)

    def test_reference_matrix_independent_oracle(self, mstar):
        dense = oracles.dense_from_sparse(mstar)
        got = oracles.oracle_all(dense, mstar.zero_shot)
        for key in ("acc", "f", "ft", "bwt", "aulc", "cl_p", "cl_s", "cl_f1", "cl_score"):
            assert got[key] == pytest.approx(MSTAR_EXPECTED[key], abs=1e-3), key
        assert oracles.oracle_cl_f_beta(got["cl_p"], got["cl_s"], 2.0) == pytest.approx(
            MSTAR_EXPECTED["cl_f2"], abs=1e-3
        )
        announce(3)

    def test_bound_invariants_ten_thousand_cases(self):
        rng = random.Random(20260824)
        for case in range(10_000):
            m = random_region_matrix(rng, rng.randint(2, 6))
            p = cl_plasticity(m)
            s = cl_stability(m)
            checks = {
                "acc": (accuracy(m), 0.0, 1.0),
                "f": (forgetting(m), 0.0, 1.0),
                "ft": (forward_transfer(m), -1.0, 1.0),
                "bwt": (backward_transfer(m), -1.0, 1.0),
                "aulc": (aulc(m), 0.0, 1.0),
                "cl_p": (p, 0.0, 1.0),
                "cl_s": (s, 0.0, 1.0),
                "cl_f1": (cl_f_beta(p, s, 1.0), 0.0, 1.0),
            }
            for name, (value, lo, hi) in checks.items():
                assert lo - 1e-12 <= value <= hi + 1e-12, f"case {case}: {name}={value}"
        announce(3)


class TestCriterion4ProtocolCertificates:
    def test_perfect_agent_certificate(self):
        seq = sequence_of(4)
        result = run_sequence(seq, GoldPatchAgent(), RunConfig(), embedder=MockEmbedder(dimension=16))
        report = metrics_for_run(result)
        assert report.acc == 1.0
        assert report.f == 0.0
        assert report.cl_f1 == 1.0
        announce(4)

    def test_forgetting_schedule_reproduced_exactly(self, mstar):
        seq = sequence_of(3)
        agent = ScheduleAgent(mstar_schedule(), seq)
        result = run_sequence(seq, agent, RunConfig(memory_enabled=False))
        assert result.matrix.entries == mstar.entries
        assert result.matrix.zero_shot == mstar.zero_shot
        announce(4)


class TestCriterion5MemoryCorrectness:
    def test_retrieval_matches_brute_force_on_100_records(self):
        rng = random.Random(5150)
        store = MemoryStore(DIM)
        records = []
        for i in range(100):
            rec = make_experience(
                i,
                sequence_id=rng.choice(["repo/a", "repo/b", "repo/c"]),
                success=rng.random() < 0.6,
                rng=rng,
            )
            records.append(rec)
            store.add_experience(rec)
        for trial in range(50):
            query = [rng.uniform(-1, 1) for _ in range(DIM)]
            k = rng.randint(1, 15)
            seq = rng.choice(["repo/a", "repo/b", "repo/c"])
            got = [h.record_id for h in store.retrieve(query, k=k, current_sequence_id=seq)]
            assert got == brute_force_knn(records, query, k, seq), f"trial {trial}"
        announce(5)

    def test_persistence_preserves_retrieval(self, tmp_path):
        rng = random.Random(99)
        store = MemoryStore(DIM)
        for i in range(100):
            store.add_experience(make_experience(i, rng=rng))
        store.save(tmp_path / "memory.json")
        loaded = MemoryStore.load(tmp_path / "memory.json")
        for trial in range(20):
            query = [rng.uniform(-1, 1) for _ in range(DIM)]
            before = store.retrieve(query, k=8, current_sequence_id="acme/widgets")
            after = loaded.retrieve(query, k=8, current_sequence_id="acme/widgets")
            assert [(h.record_id, h.score) for h in before] == [
                (h.record_id, h.score) for h in after
            ]
        announce(5)

    def test_memory_disabled_zero_retrievals(self):
        seq = sequence_of(3)
        embedder = MockEmbedder(dimension=8)
        runner = SequenceRunner(
            GoldPatchAgent(), RunConfig(memory_enabled=False), embedder=embedder
        )
        result = runner.run(seq)
        assert result.memory.retrieval_count == 0
        assert embedder.calls == 0
        announce(5)


class TestCriterion6DriftOffline:
    def pairs(self, n=10):
        from clkit.dataset import CLTask

        def task(name, repo):
            record = make_record(name, repo=repo)
            return CLTask(
                base=record,
                sequence_position=0,
                difficulty_score=record.difficulty.score,
                modified_files=frozenset({"src/a.py"}),
            )

        return [
            (task(f"src-{i}", "repo/a"), task(f"tgt-{i}", "repo/b")) for i in range(n)
        ]

    def test_identical_responses_zero_drift(self):
        chat = MockChatClient(response_fn=lambda p: "constant response")
        records, failures = run_trials(self.pairs(), chat, MockEmbedder(dimension=8))
        assert not failures
        assert all(abs(r.drift) < 1e-12 for r in records)
        announce(6)

    def test_orthogonal_embeddings_unit_drift(self):
        chat = MockChatClient(
            response_fn=lambda p: "poisoned" if "<gold_patch>" in p else "clean"
        )
        emb = MockEmbedder(
            dimension=2, vector_fn=lambda t: [1.0, 0.0] if t == "clean" else [0.0, 1.0]
        )
        records, _ = run_trials(self.pairs(), chat, emb)
        assert all(abs(r.drift - 1.0) < 1e-12 for r in records)
        announce(6)

    def test_ten_pair_batch_bit_reproducible(self):
        records = [
            make_record(
                f"r-{i:02d}",
                repo="repo/a" if i < 12 else "repo/b",
                created=f"2020-01-{i + 1:02d}T00:00:00Z",
                difficulty="<15 min" if i % 2 == 0 else "1-4 hr",
                files=(f"src/m{i}.py",),
            )
            for i in range(24)
        ]
        dataset = build_dataset(records, BuilderConfig(min_tasks_per_repo=1))
        spec = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.HARD, 10, seed=1234)
        outputs = []
        for _ in range(2):
            pairs = sample_pairs(dataset, spec)
            trial_records, failures = run_trials(pairs, MockChatClient(), MockEmbedder(dimension=32))
            assert not failures
            payload = {
                "report": aggregate(trial_records).to_dict(),
                "records": [r.__dict__ for r in trial_records],
            }
            outputs.append(json.dumps(payload, sort_keys=True))
        assert outputs[0] == outputs[1]
        announce(6)

    def test_t_interval_matches_reference(self):
        # independent reference: df=4 two-sided 95% critical value from a
        # standard t table, plain statistics-module mean and stdev
        values = [0.12, 0.31, 0.27, 0.44, 0.05]
        t_crit = 2.7764451052
        mean = statistics.mean(values)
        half = t_crit * statistics.stdev(values) / math.sqrt(len(values))
        lo, hi = t_interval(values)
        assert abs(lo - (mean - half)) < 1e-9
        assert abs(hi - (mean + half)) < 1e-9
        announce(6)


class TestCriterion7ExternalResultsIngestion:
    def test_results_file_round_trip(self, tmp_path):
        seq = sequence_of(3)
        truth = {}
        for i, task in enumerate(seq.tasks):
            truth[task.instance_id] = {
                "tests/test_a.py::test_one": "pass" if i != 1 else "fail",
                "tests/test_a.py::test_two": "pass",
            }
        path = tmp_path / "results.json"
        path.write_text(json.dumps(truth), encoding="utf-8")
        loaded = json.loads(path.read_text(encoding="utf-8"))
        assert loaded == truth

        cfg = RunConfig(memory_enabled=False, grader=GraderMode.INGEST_RESULTS)
        result = run_sequence(seq, GoldPatchAgent(), cfg, results=loaded)
        assert result.matrix.get(1, 1) == 1.0
        assert result.matrix.get(2, 2) == 0.5
        assert result.matrix.get(3, 3) == 1.0
        report = metrics_for_run(result)
        assert report.acc == pytest.approx(2.5 / 3)
        announce(7)
