import json
import math
import statistics
from pathlib import Path

import numpy as np
import pytest

from clkit.builder import BuilderConfig, build_dataset
from clkit.dataset import CLTask, DifficultyTier
from clkit.drift import (
    EXAMPLE_PATCH,
    HIGH_DRIFT_THRESHOLD,
    AllTrialsFailed,
    DriftRecord,
    InsufficientPairs,
    PoisonPairSpec,
    aggregate,
    build_task_prompt,
    run_trials,
    sample_pairs,
    t_interval,
    unrelated,
)
from clkit.gateway import GenerationParams, MockChatClient, MockEmbedder

from conftest import make_record, make_repo_records

GOLDEN = Path(__file__).parent / "data" / "prompt_golden.txt"


def _cltask(record, pos=0, files=("src/a.py",), deps=()):
    return CLTask(
        base=record,
        sequence_position=pos,
        difficulty_score=record.difficulty.score,
        modified_files=frozenset(files),
        dependencies=tuple(deps),
    )


def golden_task():
    record = make_record(
        "golden-0001",
        repo="acme/widgets",
        difficulty="<15 min",
        problem="Widget crashes when the input list is empty",
        hints="check the length guard",
    )
    return _cltask(record)


class TestUnrelated:
    def test_different_repos(self):
        a = _cltask(make_record("a", repo="acme/widgets"))
        b = _cltask(make_record("b", repo="zed/zoo"), files=("src/a.py",))
        assert unrelated(a, b)

    def test_same_repo_shared_file(self):
        a = _cltask(make_record("a"), files=("src/a.py", "src/b.py"))
        b = _cltask(make_record("b"), files=("src/b.py",))
        assert not unrelated(a, b)

    def test_same_repo_dependency_edge(self):
        a = _cltask(make_record("a"), files=("src/a.py",))
        b = _cltask(make_record("b"), files=("src/c.py",), deps=("a",))
        assert not unrelated(a, b)
        assert not unrelated(b, a)

    def test_same_repo_disjoint_no_edge(self):
        a = _cltask(make_record("a"), files=("src/a.py",))
        b = _cltask(make_record("b"), files=("src/c.py",))
        assert unrelated(a, b)


@pytest.fixture
def drift_dataset():
    records = make_repo_records("acme/widgets", 16) + make_repo_records("zed/zoo", 16)
    return build_dataset(records, BuilderConfig(min_tasks_per_repo=15))


class TestSamplePairs:
    def test_seed_reproducible(self, drift_dataset):
        spec = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.MEDIUM, 10, seed=42)
        first = sample_pairs(drift_dataset, spec)
        second = sample_pairs(drift_dataset, spec)
        assert [(a.instance_id, b.instance_id) for a, b in first] == [
            (a.instance_id, b.instance_id) for a, b in second
        ]

    def test_different_seed_different_sample(self, drift_dataset):
        base = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.MEDIUM, 10, seed=1)
        other = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.MEDIUM, 10, seed=2)
        assert sample_pairs(drift_dataset, base) != sample_pairs(drift_dataset, other)

    def test_pairs_satisfy_spec(self, drift_dataset):
        spec = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.MEDIUM, 20, seed=0)
        for source, target in sample_pairs(drift_dataset, spec):
            assert source.base.difficulty is DifficultyTier.EASY
            assert target.base.difficulty is DifficultyTier.MEDIUM
            assert source.instance_id != target.instance_id
            assert unrelated(source, target)

    def test_no_duplicate_pairs(self, drift_dataset):
        spec = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.EASY, 30, seed=5)
        pairs = sample_pairs(drift_dataset, spec)
        keys = [(a.instance_id, b.instance_id) for a, b in pairs]
        assert len(set(keys)) == len(keys)

    def test_insufficient_pairs(self, drift_dataset):
        spec = PoisonPairSpec(DifficultyTier.VERY_HARD, DifficultyTier.EASY, 1)
        with pytest.raises(InsufficientPairs) as exc_info:
            sample_pairs(drift_dataset, spec)
        assert exc_info.value.available == 0

    def test_invalid_n_pairs(self):
        with pytest.raises(ValueError):
            PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.EASY, 0)


class TestBuildTaskPrompt:
    def test_matches_golden_file(self):
        assert build_task_prompt(golden_task()) == GOLDEN.read_text(encoding="utf-8")

    def test_contains_task_fields(self):
        task = golden_task()
        prompt = build_task_prompt(task)
        assert task.base.problem_statement in prompt
        assert task.base.repo in prompt
        assert task.base.hints_text in prompt
        assert EXAMPLE_PATCH in prompt
        assert task.base.patch not in prompt  # the gold patch never leaks

    def test_retrieved_context_inserted(self):
        prompt = build_task_prompt(golden_task(), retrieved_context="PAST-EXPERIENCE-BLOCK")
        assert "PAST-EXPERIENCE-BLOCK" in prompt

    def test_poisoned_prompt_structure(self):
        target = golden_task()
        source = _cltask(make_record("poison-01", repo="zed/zoo"))
        prompt = build_task_prompt(target, poison=source)
        clean = build_task_prompt(target)
        assert prompt.endswith(clean)
        assert prompt.startswith(build_task_prompt(source))
        assert source.base.patch in prompt
        assert "<gold_patch>" in prompt
        # poison comes first, target last
        assert prompt.index(source.base.problem_statement) < prompt.index(
            target.base.problem_statement
        )

    def test_empty_hints_placeholder(self):
        task = _cltask(make_record("no-hints", hints=""))
        assert "None." in build_task_prompt(task)


class TestRunTrials:
    def pairs(self, n=4):
        sources = [_cltask(make_record(f"src-{i}", repo="acme/widgets")) for i in range(n)]
        targets = [_cltask(make_record(f"tgt-{i}", repo="zed/zoo")) for i in range(n)]
        return list(zip(sources, targets))

    def test_identical_outputs_zero_drift(self):
        chat = MockChatClient(response_fn=lambda prompt: "same patch every time")
        records, failures = run_trials(self.pairs(), chat, MockEmbedder(dimension=8))
        assert not failures
        assert all(r.drift == pytest.approx(0.0, abs=1e-12) for r in records)

    def test_orthogonal_outputs_unit_drift(self):
        # clean and poisoned prompts differ, so keyed orthogonal vectors apply
        chat = MockChatClient(response_fn=lambda p: "clean" if "<gold_patch>" not in p else "poisoned")
        emb = MockEmbedder(
            dimension=2,
            vector_fn=lambda t: [1.0, 0.0] if t == "clean" else [0.0, 1.0],
        )
        records, _ = run_trials(self.pairs(), chat, emb)
        assert all(r.drift == pytest.approx(1.0, abs=1e-12) for r in records)

    def test_per_pair_failure_isolated(self):
        calls = {"n": 0}

        def flaky(prompt):
            calls["n"] += 1
            if calls["n"] == 1:  # first pair aborts on its clean generation
                raise RuntimeError("boom")
            return "ok"

        records, failures = run_trials(self.pairs(2), MockChatClient(response_fn=flaky), MockEmbedder(dimension=4))
        assert len(records) == 1
        assert len(failures) == 1
        assert "boom" in failures[0]["error"]

    def test_all_failed_raises(self):
        def always_fail(prompt):
            raise RuntimeError("down")

        with pytest.raises(AllTrialsFailed):
            run_trials(self.pairs(2), MockChatClient(response_fn=always_fail), MockEmbedder(dimension=4))

    def test_empty_pairs_ok(self):
        records, failures = run_trials([], MockChatClient(), MockEmbedder(dimension=4))
        assert records == [] and failures == []

    def test_record_fields(self):
        chat = MockChatClient(response_fn=lambda p: "out")
        records, _ = run_trials(
            self.pairs(1), chat, MockEmbedder(dimension=4), GenerationParams(model_name="m-x")
        )
        rec = records[0]
        assert rec.source_id == "src-0" and rec.target_id == "tgt-0"
        assert rec.d_src == "EASY" and rec.d_tgt == "EASY"
        assert rec.model_name == "m-x"

    def test_mock_run_bit_reproducible(self, drift_dataset):
        spec = PoisonPairSpec(DifficultyTier.EASY, DifficultyTier.MEDIUM, 10, seed=7)
        outputs = []
        for _ in range(2):
            pairs = sample_pairs(drift_dataset, spec)
            records, failures = run_trials(pairs, MockChatClient(), MockEmbedder(dimension=16))
            assert not failures
            outputs.append(aggregate(records).to_json())
        assert outputs[0] == outputs[1]


class TestTInterval:
    def test_matches_textbook_constant(self):
        # df=4 two-sided 95% critical value 2.7764451052 (standard t table)
        values = [0.1, 0.2, 0.3, 0.4, 0.5]
        mean = statistics.mean(values)
        sem = statistics.stdev(values) / math.sqrt(5)
        lo, hi = t_interval(values)
        assert lo == pytest.approx(mean - 2.7764451052 * sem, abs=1e-9)
        assert hi == pytest.approx(mean + 2.7764451052 * sem, abs=1e-9)

    def test_symmetric_about_mean(self):
        values = [0.3, 0.5, 0.9, 0.2]
        lo, hi = t_interval(values)
        assert (lo + hi) / 2 == pytest.approx(statistics.mean(values), abs=1e-12)

    def test_constant_values_degenerate(self):
        lo, hi = t_interval([0.4, 0.4, 0.4])
        assert lo == pytest.approx(0.4) and hi == pytest.approx(0.4)

    def test_needs_two_observations(self):
        with pytest.raises(ValueError):
            t_interval([0.5])


def _drift_record(src, tgt, drift, d_src="EASY", d_tgt="MEDIUM"):
    return DriftRecord(
        source_id=src,
        target_id=tgt,
        d_src=d_src,
        d_tgt=d_tgt,
        drift=drift,
        clean_latency=0.0,
        poisoned_latency=0.0,
        model_name="mock-chat",
    )


class TestAggregate:
    def test_group_means(self):
        report = aggregate(
            [
                _drift_record("a", "b", 0.2),
                _drift_record("c", "d", 0.4),
                _drift_record("e", "f", 0.9, d_src="HARD"),
            ]
        )
        by_key = {(g.d_src, g.d_tgt): g for g in report.groups}
        easy = by_key[("EASY", "MEDIUM")]
        assert easy.n == 2 and easy.mean == pytest.approx(0.3)
        assert easy.ci_lo is not None and easy.ci_lo < 0.3 < easy.ci_hi
        hard = by_key[("HARD", "MEDIUM")]
        assert hard.n == 1 and hard.ci_lo is None and hard.ci_hi is None
        assert any("n=1" in w for w in report.warnings)

    def test_threshold_constant_recorded(self):
        report = aggregate([_drift_record("a", "b", 0.5)])
        assert report.high_drift_threshold == HIGH_DRIFT_THRESHOLD == 0.3

    def test_json_and_csv_render(self):
        report = aggregate([_drift_record("a", "b", 0.25), _drift_record("c", "d", 0.35)])
        obj = json.loads(report.to_json())
        assert obj["groups"][0]["n"] == 2
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "d_src,d_tgt,n,mean,ci_lo,ci_hi"
        assert "EASY,MEDIUM,2," in csv_text

    def test_groups_sorted(self):
        report = aggregate(
            [
                _drift_record("a", "b", 0.1, d_src="MEDIUM"),
                _drift_record("c", "d", 0.1, d_src="EASY"),
            ]
        )
        assert [g.d_src for g in report.groups] == ["EASY", "MEDIUM"]
