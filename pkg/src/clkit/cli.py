"""Command-line front end.

Every subcommand reads an optional TOML/JSON config file; flags override
config values. Report paths write delimited output (JSON + CSV) together
with rendered matplotlib figures.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import click

from . import builder as builder_mod
from . import drift as drift_mod
from . import plots
from .dataset import DifficultyTier, parse_corpus
from .gateway import GenerationParams, MockChatClient, MockEmbedder, OpenAICompatClient
from .memory import MemoryStore
from .metrics import PerformanceMatrix, RunTimings, ScoreWeights, partial_report
from .runner import (
    FailingAgent,
    GoldPatchAgent,
    GraderMode,
    LLMAgent,
    ReevalPolicy,
    RunConfig,
    emit_reports,
    run_sequence,
)
from .similarity import SimilarityMode, pairwise_report


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def _tier(value: str) -> DifficultyTier:
    key = value.strip().upper().replace("-", "_").replace(" ", "_")
    try:
        return DifficultyTier[key]
    except KeyError:
        from .dataset import difficulty_from_annotation

        return difficulty_from_annotation(value)


@click.group()
def main():
    """Continual-learning evaluation toolkit for resolved-issue corpora."""


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True), help="Source corpus (JSON array or JSON-lines).")
@click.option("--out", required=True, type=click.Path(), help="Output dataset JSON path.")
@click.option("--min-tasks", default=15, show_default=True, help="Minimum tasks per repository.")
@click.option("--max-tasks", default=50, show_default=True, help="Cap per sequence (0 = unlimited).")
@click.option("--ordering", type=click.Choice([o.value for o in builder_mod.Ordering]), default=builder_mod.Ordering.DIFFICULTY_THEN_TIME.value, show_default=True)
@click.option("--include-test-patch", is_flag=True, help="Count test-patch files toward modified files.")
def build(corpus, out, min_tasks, max_tasks, ordering, include_test_patch):
    """Build learning sequences from a source corpus."""
    with open(corpus, encoding="utf-8") as fh:
        records = parse_corpus(fh)
    cfg = builder_mod.BuilderConfig(
        min_tasks_per_repo=min_tasks,
        max_tasks_per_sequence=max_tasks or None,
        include_test_patch_files=include_test_patch,
        ordering=builder_mod.Ordering(ordering),
    )
    dataset = builder_mod.build_dataset(records, cfg)
    Path(out).write_text(builder_mod.dataset_to_json(dataset), encoding="utf-8")
    click.echo(f"{len(dataset.sequences)} sequences, {dataset.total_tasks} tasks -> {out}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), default=None, help="Also write stats.csv/stats.json here.")
def stats(dataset_path, out_dir):
    """Per-sequence dataset statistics."""
    dataset = builder_mod.load_dataset(dataset_path)
    st = builder_mod.compute_stats(dataset)
    click.echo(builder_mod.stats_table(st))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.csv").write_text(builder_mod.stats_to_csv(st), encoding="utf-8")
        rows = [
            {
                "repo": r.repo,
                "tasks": r.task_count,
                "tiers": {t.name: c for t, c in r.tier_counts.items()},
                "tasks_with_dependencies": r.tasks_with_dependencies,
                "dependency_percent": r.dependency_percent,
            }
            for r in st.rows
        ]
        (out / "stats.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
        click.echo(f"wrote {out / 'stats.csv'} and {out / 'stats.json'}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["jaccard", "tfidf"]), default="jaccard", show_default=True)
@click.option("--text-source", type=click.Choice(["patch", "problem_statement"]), default="patch", show_default=True)
@click.option("--top-pairs", default=10, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def similarity(dataset_path, mode, text_source, top_pairs, out_dir):
    """Pairwise patch-similarity report (JSON + CSV + histogram figure)."""
    dataset = builder_mod.load_dataset(dataset_path)
    report = pairwise_report(
        dataset,
        SimilarityMode.JACCARD if mode == "jaccard" else SimilarityMode.TFIDF_COSINE,
        text_source=text_source,
        top_k=top_pairs,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"similarity_{mode}.json").write_text(report.to_json(), encoding="utf-8")
    (out / f"similarity_{mode}.csv").write_text(report.to_csv(), encoding="utf-8")
    plots.similarity_histogram(report, out / f"similarity_{mode}.png")
    click.echo(f"mean {mode} similarity over {report.pair_count} pairs: {report.mean:.4f}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--d-src", default="easy", show_default=True, help="Source (poison) difficulty tier.")
@click.option("--d-tgt", default="hard", show_default=True, help="Target difficulty tier.")
@click.option("--n-pairs", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--mock/--live", default=True, show_default=True, help="Offline mock gateway vs configured endpoint.")
@click.option("--model", default="mock-chat", show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def drift(dataset_path, d_src, d_tgt, n_pairs, seed, mock, model, out_dir):
    """Prompt-poisoning drift analysis (JSON + CSV + group-bar figure)."""
    dataset = builder_mod.load_dataset(dataset_path)
    spec = drift_mod.PoisonPairSpec(d_src=_tier(d_src), d_tgt=_tier(d_tgt), n_pairs=n_pairs, seed=seed)
    pairs = drift_mod.sample_pairs(dataset, spec)
    if mock:
        chat, embedder = MockChatClient(), MockEmbedder()
    else:
        client = OpenAICompatClient()
        chat = embedder = client
    params = GenerationParams(model_name=model)
    records, failures = drift_mod.run_trials(pairs, chat, embedder, params)
    report = drift_mod.aggregate(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "drift.json").write_text(report.to_json(), encoding="utf-8")
    (out / "drift.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "drift_records.json").write_text(
        json.dumps({"records": [r.__dict__ for r in records], "failures": failures}, indent=2),
        encoding="utf-8",
    )
    plots.drift_group_bars(report, out / "drift.png")
    for g in report.groups:
        ci = "" if g.ci_lo is None else f" (95% CI [{g.ci_lo:.4f}, {g.ci_hi:.4f}])"
        click.echo(f"{g.d_src}->{g.d_tgt}: mean drift {g.mean:.4f} over n={g.n}{ci}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="TOML or JSON run config.")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--repo", default=None, help="Sequence to run (defaults to the first).")
@click.option("--agent", "agent_name", type=click.Choice(["gold", "fail", "llm"]), default=None)
@click.option("--memory/--no-memory", "memory_enabled", default=None)
@click.option("--k-memories", type=int, default=None)
@click.option("--max-context-tokens", type=int, default=None)
@click.option("--reeval", type=click.Choice([p.value for p in ReevalPolicy]), default=None)
@click.option("--grader", type=click.Choice([g.value for g in GraderMode]), default=None)
@click.option("--results", "results_path", type=click.Path(exists=True), default=None, help="External per-test results JSON (ingest grader).")
@click.option("--mock/--live", default=True, show_default=True)
@click.option("--model", default="mock-chat", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default=None)
def run(config_path, dataset_path, repo, agent_name, memory_enabled, k_memories,
        max_context_tokens, reeval, grader, results_path, mock, model, seed, out_dir):
    """Run the sequential evaluation protocol on one learning sequence."""
    conf = load_config(config_path)

    def pick(flag, key, default):
        return flag if flag is not None else conf.get(key, default)

    dataset_path = pick(dataset_path, "dataset", None)
    if dataset_path is None:
        raise click.UsageError("a dataset is required (--dataset or config 'dataset')")
    out_dir = pick(out_dir, "output_dir", "clkit-run")
    agent_name = pick(agent_name, "agent", "gold")
    results_path = pick(results_path, "results", None)

    cfg = RunConfig(
        memory_enabled=bool(pick(memory_enabled, "memory_enabled", True)),
        k_memories=int(pick(k_memories, "k_memories", 5)),
        max_context_tokens=int(pick(max_context_tokens, "max_context_tokens", 2000)),
        reeval_policy=ReevalPolicy(pick(reeval, "reeval_policy", ReevalPolicy.AFTER_EVERY_TASK.value)),
        grader=GraderMode(pick(grader, "grader", GraderMode.PATCH_SIMILARITY.value)),
        patch_similarity_threshold=float(conf.get("patch_similarity_threshold", 0.5)),
        seed=int(pick(seed, "seed", 0)),
        output_dir=str(out_dir),
    )

    dataset = builder_mod.load_dataset(dataset_path)
    repo = pick(repo, "repo", None)
    if repo is None:
        seq = dataset.sequences[0]
    else:
        matching = [s for s in dataset.sequences if s.repo == repo]
        if not matching:
            raise click.UsageError(f"no sequence for repo {repo!r}")
        seq = matching[0]

    if mock:
        embedder = MockEmbedder()
        chat = MockChatClient()
    else:
        client = OpenAICompatClient()
        embedder = chat = client

    if agent_name == "gold":
        agent = GoldPatchAgent()
    elif agent_name == "fail":
        agent = FailingAgent()
    else:
        agent = LLMAgent(chat, GenerationParams(model_name=model))

    results = None
    if results_path is not None:
        with open(results_path, encoding="utf-8") as fh:
            results = json.load(fh)

    result = run_sequence(seq, agent, cfg, embedder=embedder, results=results)
    if cfg.memory_enabled and result.memory is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        result.memory.save(Path(out_dir) / "memory.json")
    written = emit_reports(result, out_dir, cfg)
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--matrix", "matrix_path", required=True, type=click.Path(exists=True), help="Matrix JSON or CSV.")
@click.option("--timings", "timings_path", type=click.Path(exists=True), default=None)
@click.option("--lambda-f", default=0.5, show_default=True)
@click.option("--lambda-ft", default=0.5, show_default=True)
@click.option("--lambda-bwt", default=0.5, show_default=True)
@click.option("--lambda-aulc", default=0.2, show_default=True)
@click.option("--lambda-tue", default=0.0, show_default=True)
@click.option("--beta", default=1.0, show_default=True)
@click.option("--out-dir", type=click.Path(), default=None)
def metrics(matrix_path, timings_path, lambda_f, lambda_ft, lambda_bwt, lambda_aulc, lambda_tue, beta, out_dir):
    """Compute the metric suite from a stored performance matrix."""
    text = Path(matrix_path).read_text(encoding="utf-8")
    if matrix_path.endswith(".csv"):
        m = PerformanceMatrix.from_csv(text)
    else:
        m = PerformanceMatrix.from_json(text)
    timings = None
    if timings_path:
        attempts = json.loads(Path(timings_path).read_text(encoding="utf-8"))
        timings = RunTimings.from_attempts(attempts)
    weights = ScoreWeights(
        lambda_f=lambda_f, lambda_ft=lambda_ft, lambda_bwt=lambda_bwt,
        lambda_aulc=lambda_aulc, lambda_tue=lambda_tue, beta=beta,
    )
    report = partial_report(m, timings, weights)
    click.echo(report.to_markdown())
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
        (out / "metrics.md").write_text(report.to_markdown() + "\n", encoding="utf-8")
        plots.matrix_heatmap(m, out / "matrix.png")
        click.echo(f"wrote reports to {out}")


@main.group()
def memory():
    """Inspect persisted experience memory."""


@memory.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
def inspect(store_path):
    """Summarize a persisted memory store."""
    store = MemoryStore.load(store_path)
    click.echo(f"dimension: {store.dimension}")
    click.echo(f"records: {len(store)}")
    for rid, rec in enumerate(store.records()):
        status = "ok " if rec.success else "FAIL"
        click.echo(
            f"  [{rid}] {status} {rec.task_id} (seq {rec.sequence_id}, step {rec.created_at_step}): "
            f"{rec.problem_summary[:60]}"
        )


if __name__ == "__main__":
    sys.exit(main())
