import json
from datetime import datetime, timezone

import pytest

from clkit.dataset import TaskRecord, difficulty_from_annotation
from clkit.builder import BuilderConfig, build_dataset
from clkit.metrics import PerformanceMatrix


def make_patch(*files, token="alpha"):
    """Minimal well-formed unified diff touching the given files."""
    sections = []
    for f in files:
        sections.append(
            f"--- a/{f}\n"
            f"+++ b/{f}\n"
            "@@ -1,2 +1,3 @@\n"
            " line1\n"
            f"-old {token}\n"
            f"+new {token}\n"
            "+added\n"
        )
    return "".join(sections)


def make_record(
    instance_id,
    repo="acme/widgets",
    created="2020-01-01T00:00:00Z",
    difficulty="<15 min",
    files=("src/a.py",),
    patch=None,
    problem=None,
    hints="look at the stack trace",
    fail_to_pass=("tests/test_a.py::test_one",),
    pass_to_pass=("tests/test_a.py::test_two",),
    token=None,
):
    return TaskRecord(
        instance_id=instance_id,
        repo=repo,
        base_commit="deadbeef" + instance_id[-4:].rjust(4, "0"),
        created_at=datetime.fromisoformat(created.replace("Z", "+00:00")).astimezone(timezone.utc),
        problem_statement=problem or f"Widget breaks in scenario {instance_id}",
        hints_text=hints,
        patch=patch or make_patch(*files, token=token or instance_id),
        test_patch=make_patch("tests/test_a.py", token="test-" + instance_id),
        fail_to_pass=tuple(fail_to_pass),
        pass_to_pass=tuple(pass_to_pass),
        difficulty=difficulty_from_annotation(difficulty),
    )


def record_json(record):
    return record.to_dict()


def make_repo_records(repo, count, start=0, difficulty_cycle=("<15 min", "15 min - 1 hr")):
    records = []
    for i in range(start, start + count):
        records.append(
            make_record(
                f"{repo.replace('/', '__')}-{i:04d}",
                repo=repo,
                created=f"2020-01-{(i % 28) + 1:02d}T00:00:00Z",
                difficulty=difficulty_cycle[i % len(difficulty_cycle)],
                files=(f"src/mod_{i % 6}.py",),
            )
        )
    return records


@pytest.fixture
def small_dataset():
    """Two repos, 16 tasks each, overlapping files within each repo."""
    records = make_repo_records("acme/widgets", 16) + make_repo_records("acme/gadgets", 16)
    return build_dataset(records, BuilderConfig(min_tasks_per_repo=15))


@pytest.fixture
def mstar():
    """The 3-task reference matrix used across metric tests."""
    return PerformanceMatrix(
        n_tasks=3,
        task_ids=["t1", "t2", "t3"],
        zero_shot=[0.4, 0.1, 0.3],
        entries={
            (1, 1): 1.0,
            (1, 2): 0.2,
            (2, 1): 0.7,
            (2, 2): 0.8,
            (2, 3): 0.5,
            (3, 1): 0.5,
            (3, 2): 0.6,
            (3, 3): 0.9,
        },
    )


@pytest.fixture
def corpus_file(tmp_path):
    """A corpus JSON file on disk with two qualifying repos."""
    records = make_repo_records("acme/widgets", 16) + make_repo_records("acme/gadgets", 16)
    path = tmp_path / "corpus.json"
    path.write_text(json.dumps([record_json(r) for r in records]), encoding="utf-8")
    return path
