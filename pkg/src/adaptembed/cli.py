"""Command-line interface over the library's pipeline stages."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import click
import numpy as np

from adaptembed import figures, pipeline
from adaptembed.calibrate import calibrate as run_calibration
from adaptembed.corpus import build_vocabulary, encode, read_documents
from adaptembed.drift import (
    DEFAULT_K,
    DEFAULT_LAMBDA,
    DEFAULT_TOP_M,
    LAMBDA_GRID,
    build_report,
)
from adaptembed.evaluate import (
    AwppConfig,
    awpp,
    awpp_perplexity,
    classifier_metrics,
    format_neighbor_table,
    neighbor_table,
    save_metrics_tsv,
    train_classifier,
)
from adaptembed.manifest import (
    DEFAULT_ALPHA_GRID,
    MODES,
    Manifest,
    load_manifest,
)
from adaptembed.select import (
    DEFAULT_CUTOFF_QUANTILES,
    DEFAULT_MIN_VOTES,
    DEFAULT_TOP_R,
    index_source,
    retain,
    retrieve,
)
from adaptembed.trainer import TrainConfig, load_embeddings


def _floats(_ctx, _param, value):
    if value is None:
        return None
    return tuple(float(x) for x in value.replace(",", " ").split())


@click.group()
@click.option("--seed", type=int, default=None, help="Override the experiment seed.")
@click.option("--workers", type=int, default=None, help="Override worker count.")
@click.option("-v", "--verbose", is_flag=True, help="Enable info logging.")
@click.pass_context
def main(ctx, seed, workers, verbose):
    """Domain adaptation toolkit for word embeddings."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING)
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["workers"] = workers


def _apply_overrides(m: Manifest, ctx) -> Manifest:
    changes = {}
    if ctx.obj.get("seed") is not None:
        changes["seed"] = ctx.obj["seed"]
    if ctx.obj.get("workers") is not None:
        changes["workers"] = ctx.obj["workers"]
    return dataclasses.replace(m, **changes) if changes else m


@main.command()
@click.argument("corpus", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--min-count", type=int, default=5, show_default=True)
@click.option("--paragraph-mode", is_flag=True)
def vocab(corpus, output, min_count, paragraph_mode):
    """Count a corpus into a word\\tcount vocabulary TSV."""
    docs = read_documents(corpus, paragraph_mode=paragraph_mode)
    v = build_vocabulary((t for d in docs for t in d), min_count=min_count)
    v.save_tsv(output)
    click.echo(f"{len(v)} words ({v.total_tokens} tokens) -> {output}")


_train_options = [
    click.option("--dim", type=int, default=TrainConfig.dim, show_default=True),
    click.option("--window", type=int, default=TrainConfig.window, show_default=True),
    click.option(
        "--negatives", type=int, default=TrainConfig.negatives, show_default=True
    ),
    click.option("--epochs", type=int, default=TrainConfig.epochs, show_default=True),
    click.option(
        "--initial-lr", type=float, default=TrainConfig.initial_lr, show_default=True
    ),
    click.option(
        "--distortion", type=float, default=TrainConfig.distortion, show_default=True
    ),
    click.option(
        "--reg-weight", type=float, default=TrainConfig.reg_weight, show_default=True
    ),
    click.option("--min-count", type=int, default=5, show_default=True),
    click.option("--paragraph-mode", is_flag=True),
]


def _with_train_options(fn):
    for opt in reversed(_train_options):
        fn = opt(fn)
    return fn


def _train_config(kw) -> TrainConfig:
    return TrainConfig(
        dim=kw["dim"],
        window=kw["window"],
        negatives=kw["negatives"],
        epochs=kw["epochs"],
        initial_lr=kw["initial_lr"],
        distortion=kw["distortion"],
        reg_weight=kw["reg_weight"],
    )


@main.command()
@click.option("--mode", type=click.Choice(MODES), default="tgt", show_default=True)
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--source", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--top-r", type=int, default=DEFAULT_TOP_R, show_default=True)
@click.option("--min-votes", type=int, default=DEFAULT_MIN_VOTES, show_default=True)
@click.option(
    "--cutoff-quantiles", callback=_floats,
    default=",".join(str(q) for q in DEFAULT_CUTOFF_QUANTILES), show_default=True,
)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--lam", type=float, default=DEFAULT_LAMBDA, show_default=True,
              help="Drift-score steepness lambda.")
@click.option("--calibrate/--no-calibrate", "do_calibrate", default=False,
              help="Pick lambda and alpha by held-out jumbling first.")
@_with_train_options
@click.pass_context
def train(ctx, mode, target, source, output, top_r, min_votes, cutoff_quantiles,
          alpha, lam, do_calibrate, **kw):
    """Run one training mode end to end (train, export, evaluate)."""
    m = Manifest(
        mode=mode,
        target=target,
        source=source,
        output=output,
        min_count=kw["min_count"],
        paragraph_mode=kw["paragraph_mode"],
        train=_train_config(kw),
        top_r=top_r,
        min_votes=min_votes,
        cutoff_quantiles=cutoff_quantiles,
        alpha=alpha,
        drift_lambda=lam,
        calibrate=do_calibrate,
    )
    artifacts = pipeline.run(_apply_overrides(m, ctx))
    for name, path in sorted(artifacts.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.pass_context
def run(ctx, manifest_path):
    """Execute an experiment manifest file."""
    m = _apply_overrides(load_manifest(manifest_path), ctx)
    artifacts = pipeline.run(m)
    for name, path in sorted(artifacts.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.option("--source-embeddings", required=True, type=click.Path(exists=True))
@click.option("--target-embeddings", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Output TSV; a histogram PNG lands next to it.")
@click.option("--k", type=int, default=DEFAULT_K, show_default=True)
@click.option("--lam", type=float, default=DEFAULT_LAMBDA, show_default=True)
@click.option("--top-m", type=int, default=DEFAULT_TOP_M, show_default=True)
@click.option("--target-vocab", type=click.Path(exists=True),
              help="Vocabulary TSV driving the top-m frequency clipping.")
def drift(source_embeddings, target_embeddings, output, k, lam, top_m, target_vocab):
    """Score per-word stability between two embedding files."""
    src = load_embeddings(source_embeddings)
    tgt = load_embeddings(target_embeddings)
    counts = None
    if target_vocab:
        from adaptembed.corpus import Vocabulary

        v = Vocabulary.load_tsv(target_vocab)
        counts = np.array(
            [v.counts[v.id_of[w]] if w in v.id_of else 0 for w in tgt.words]
        )
    report = build_report(src, tgt, k=k, lam=lam, top_m=top_m, tgt_counts=counts)
    report.save_tsv(output)
    fig_path = Path(output).with_suffix(".png")
    figures.wscore_histogram(report.wscores(), fig_path)
    click.echo(f"{len(report.shared_words)} shared words -> {output}, {fig_path}")


@main.command()
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Output TSV; a score histogram PNG lands next to it.")
@click.option("--top-r", type=int, default=DEFAULT_TOP_R, show_default=True)
@click.option("--min-votes", type=int, default=DEFAULT_MIN_VOTES, show_default=True)
@click.option(
    "--cutoff-quantiles", callback=_floats,
    default=",".join(str(q) for q in DEFAULT_CUTOFF_QUANTILES), show_default=True,
)
@click.option("--min-count", type=int, default=5, show_default=True)
@click.option("--paragraph-mode", is_flag=True)
@click.pass_context
def select(ctx, target, source, output, top_r, min_votes, cutoff_quantiles,
           min_count, paragraph_mode):
    """Retrieve and retain source documents for a target corpus."""
    tdocs = read_documents(target, paragraph_mode=paragraph_mode)
    tvocab = build_vocabulary((t for d in tdocs for t in d), min_count=min_count)
    tcorpus = encode(tdocs, tvocab)
    sdocs = read_documents(source, paragraph_mode=paragraph_mode)
    scorpus = encode(sdocs, tvocab)
    index = index_source(scorpus)
    retrievals = [retrieve(index, doc, top_r) for doc in tcorpus.docs]
    seed = ctx.obj.get("seed") or 0
    from adaptembed.trainer import substream

    order = substream(seed, pipeline.STREAM_QUERY_SPLIT).permutation(len(retrievals))
    n_held = int(round(pipeline.QUERY_HELDOUT_FRACTION * len(retrievals)))
    result = retain(
        retrievals,
        min_votes=min_votes,
        heldout_queries=sorted(order[:n_held].tolist()),
        cutoff_quantiles=cutoff_quantiles,
    )
    result.save_tsv(output)
    fig_path = Path(output).with_suffix(".png")
    figures.selection_histogram(result, fig_path)
    click.echo(
        f"retained {len(result.retained)}/{len(scorpus)} source documents "
        f"-> {output}, {fig_path}"
    )


@main.command()
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Output TSV; a grid heatmap PNG lands next to it.")
@click.option(
    "--lambda-grid", callback=_floats,
    default=",".join(str(l) for l in LAMBDA_GRID), show_default=True,
)
@click.option(
    "--alpha-grid", callback=_floats,
    default=",".join(str(a) for a in DEFAULT_ALPHA_GRID), show_default=True,
)
@click.option("--heldout-fraction", type=float, default=0.2, show_default=True)
@click.option("--min-heldout-docs", type=int, default=100, show_default=True)
@_with_train_options
@click.pass_context
def calibrate(ctx, target, output, lambda_grid, alpha_grid, heldout_fraction,
              min_heldout_docs, **kw):
    """Choose lambda and alpha by the held-out jumbling control."""
    docs = read_documents(target, paragraph_mode=kw["paragraph_mode"])
    vocab_ = build_vocabulary((t for d in docs for t in d), min_count=kw["min_count"])
    corpus = encode(docs, vocab_)
    cfg = dataclasses.replace(
        _train_config(kw),
        seed=ctx.obj.get("seed") or 0,
        workers=ctx.obj.get("workers") or 1,
    )
    result = run_calibration(
        corpus,
        lambda_grid,
        alpha_grid,
        heldout_fraction=heldout_fraction,
        seed=cfg.seed,
        config=cfg,
        min_heldout_docs=min_heldout_docs,
    )
    result.save_tsv(output)
    fig_path = Path(output).with_suffix(".png")
    figures.calibration_heatmap(result, fig_path)
    click.echo(f"selected lambda={result.lam:g} alpha={result.alpha:g} "
               f"-> {output}, {fig_path}")


@main.command(name="eval")
@click.option("--embeddings", required=True, type=click.Path(exists=True),
              help="Exported embedding text file.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Corpus for probe-word frequency ranking.")
@click.option("--probes", help="Comma-separated probe words for neighbor lists.")
@click.option("--labeled", type=click.Path(exists=True),
              help="label<TAB>text TSV; train/test a bag-of-vectors classifier.")
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("-o", "--output-dir", required=True, type=click.Path())
@click.option("--k", type=int, default=10, show_default=True)
@click.pass_context
def eval_cmd(ctx, embeddings, corpus_path, probes, labeled, test_fraction,
             output_dir, k):
    """Nearest-neighbor lists and classifier metrics for an embedding file."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_embeddings(embeddings)
    seed = ctx.obj.get("seed") or 0
    wrote = []
    probe_words: list[str] = []
    if probes:
        probe_words = [p for p in probes.replace(",", " ").split() if p]
    elif corpus_path:
        docs = read_documents(corpus_path)
        v = build_vocabulary((t for d in docs for t in d), min_count=1)
        probe_words = [w for w in v.words if w in model.id_of][:10]
    if probe_words:
        table = neighbor_table({"model": model}, probe_words, k=k)
        (out / "neighbors.txt").write_text(
            format_neighbor_table(table), encoding="utf-8"
        )
        wrote.append(out / "neighbors.txt")
    if labeled:
        pairs = []
        with open(labeled, encoding="utf-8") as fh:
            for line in fh:
                label, _, text = line.rstrip("\n").partition("\t")
                if text:
                    from adaptembed.corpus import tokenize

                    pairs.append((tokenize(text), label))
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(pairs))
        n_test = max(1, int(round(test_fraction * len(pairs))))
        test = [pairs[i] for i in order[:n_test]]
        train_set = [pairs[i] for i in order[n_test:]]
        clf = train_classifier(train_set, model, seed=seed)
        metrics = classifier_metrics(clf, test, model)
        save_metrics_tsv(metrics, out / "classifier.tsv")
        figures.metrics_bar(metrics, out / "classifier.png")
        wrote += [out / "classifier.tsv", out / "classifier.png"]
    if not wrote:
        raise click.UsageError("nothing to evaluate: pass --probes/--corpus/--labeled")
    for path in wrote:
        click.echo(str(path))


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path(),
              help="Output TSV; a grouped bar chart PNG lands next to it.")
@click.option("--labels", help="Comma-separated method labels, aligned with REPORTS; "
                               "repeated labels aggregate as repeated-seed runs.")
@click.option("--markdown", is_flag=True, help="Also print the markdown table.")
def compare(reports, output, labels, markdown):
    """Aggregate metric reports into a methods x metrics table."""
    label_list = labels.split(",") if labels else None
    table = pipeline.compare(reports, label_list)
    table.save_tsv(output)
    fig_path = Path(output).with_suffix(".png")
    figures.comparison_chart(table, fig_path)
    click.echo(f"{len(table.labels)} methods x {len(table.metrics)} metrics "
               f"-> {output}, {fig_path}")
    if markdown:
        click.echo(table.to_markdown())


if __name__ == "__main__":
    main()
