"""Experiment orchestration: manifest -> artifacts on disk.

Each mode is a short stage graph over the library modules.  Expensive
stages (model training, calibration) are cached under a content-hash key,
so rerunning an unchanged manifest loads them instead of retraining; every
stage appends a HIT/RUN line to ``stages.log`` in the output directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from adaptembed import figures
from adaptembed.calibrate import CalibrationResult, GridPoint, calibrate
from adaptembed.corpus import Corpus, build_vocabulary, encode, read_documents
from adaptembed.drift import build_report
from adaptembed.evaluate import AwppConfig, awpp, awpp_perplexity, save_metrics_tsv
from adaptembed.manifest import (
    Manifest,
    REG_MODES,
    SRCSEL_MODES,
    save_manifest,
)
from adaptembed.select import (
    SnippetWeighting,
    index_source,
    joint_train,
    retain,
    retrieve,
    src_plus_tgt_train,
)
from adaptembed.trainer import (
    EmbeddingModel,
    Reg,
    Regularizer,
    SrcTune,
    Tgt,
    TrainConfig,
    export_embeddings,
    substream,
    train,
)

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "ADAPTEMBED_CACHE"
#: Substream tag for the held-out retrieval-query split.
STREAM_QUERY_SPLIT = 7
QUERY_HELDOUT_FRACTION = 0.2


def corpus_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    h.update(corpus.vocabulary.hash().encode())
    for doc in corpus.docs:
        h.update(doc.tobytes())
    return h.hexdigest()


def _config_key(config: TrainConfig) -> str:
    return repr(config)


class StageRunner:
    """Content-keyed cache plus an append-only stage log."""

    def __init__(self, cache_dir: Path, log_path: Path):
        self.cache_dir = cache_dir
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = log_path

    def _log(self, stage: str, key: str, status: str, elapsed: float) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(f"{stage}\t{key[:16]}\t{status}\t{elapsed:.2f}s\n")

    @staticmethod
    def key_of(*parts: str) -> str:
        h = hashlib.sha256()
        for part in parts:
            h.update(part.encode())
            h.update(b"\x00")
        return h.hexdigest()

    def model_stage(self, stage: str, key: str, compute) -> EmbeddingModel:
        path = self.cache_dir / f"{key}.npz"
        start = time.time()
        if path.exists():
            model = load_model_npz(path)
            self._log(stage, key, "HIT", time.time() - start)
            return model
        model = compute()
        save_model_npz(model, path)
        self._log(stage, key, "RUN", time.time() - start)
        return model

    def json_stage(self, stage: str, key: str, compute) -> dict:
        path = self.cache_dir / f"{key}.json"
        start = time.time()
        if path.exists():
            payload = json.loads(path.read_text(encoding="utf-8"))
            self._log(stage, key, "HIT", time.time() - start)
            return payload
        payload = compute()
        path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        self._log(stage, key, "RUN", time.time() - start)
        return payload


def save_model_npz(model: EmbeddingModel, path: Path) -> None:
    tmp = path.with_suffix(".tmp.npz")
    np.savez(
        tmp,
        words=np.array(model.words),
        focus=model.focus,
        context=model.context if model.context is not None else np.empty(0),
        has_context=np.array(model.context is not None),
        vocab_hash=np.array(model.vocab_hash),
    )
    os.replace(tmp, path)


def load_model_npz(path: Path) -> EmbeddingModel:
    data = np.load(path, allow_pickle=False)
    context = data["context"] if bool(data["has_context"]) else None
    return EmbeddingModel(
        tuple(data["words"].tolist()),
        data["focus"],
        context,
        str(data["vocab_hash"]),
    )


def _load_corpus(path: str, min_count: int, paragraph_mode: bool) -> Corpus:
    docs = read_documents(path, paragraph_mode=paragraph_mode)
    if not docs:
        raise ValueError(f"{path}: no documents")
    vocab = build_vocabulary(
        (t for doc in docs for t in doc), min_count=min_count
    )
    if len(vocab) == 0:
        raise ValueError(f"{path}: vocabulary is empty at min_count={min_count}")
    return encode(docs, vocab)


def run(m: Manifest) -> dict[str, Path]:
    """Execute the manifest's stage graph; returns the artifact paths."""
    out = Path(m.output)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(os.environ.get(CACHE_ENV_VAR) or out / "cache")
    runner = StageRunner(cache_dir, out / "stages.log")
    artifacts: dict[str, Path] = {}

    save_manifest(m, out / "manifest.resolved")
    artifacts["manifest"] = out / "manifest.resolved"

    target = _load_corpus(m.target, m.min_count, m.paragraph_mode)
    target.vocabulary.save_tsv(out / "vocab.tsv")
    artifacts["vocab"] = out / "vocab.tsv"
    tgt_hash = corpus_hash(target)
    cfg = m.train

    source_own: Corpus | None = None  # source under its own vocabulary
    source_tv: Corpus | None = None  # source restricted to the target vocabulary
    if m.source:
        src_docs = read_documents(m.source, paragraph_mode=m.paragraph_mode)
        if not src_docs:
            raise ValueError(f"{m.source}: no documents")
        src_vocab = build_vocabulary(
            (t for doc in src_docs for t in doc), min_count=m.min_count
        )
        if m.mode in ("src", "src-tune") + REG_MODES + ("srcsel-word",):
            if len(src_vocab) == 0:
                raise ValueError(
                    f"{m.source}: vocabulary is empty at min_count={m.min_count}"
                )
            source_own = encode(src_docs, src_vocab)
        if m.mode in ("src-plus-tgt",) + SRCSEL_MODES:
            source_tv = encode(src_docs, target.vocabulary)
            if len(source_tv) == 0:
                raise ValueError(
                    f"{m.source}: no documents survive the target vocabulary"
                )

    def train_cached(stage: str, corpus: Corpus, mode_obj, extra: str = "",
                     config: TrainConfig = cfg) -> EmbeddingModel:
        key = runner.key_of(
            stage, corpus_hash(corpus), _config_key(config), extra
        )
        return runner.model_stage(stage, key, lambda: train(corpus, config, mode_obj))

    model: EmbeddingModel
    if m.mode == "tgt":
        model = train_cached("train-target", target, Tgt())
    elif m.mode == "src":
        model = train_cached("train-source", source_own, Tgt())
    elif m.mode == "src-tune":
        src_model = train_cached("train-source", source_own, Tgt())
        model = train_cached(
            "finetune-target", target, SrcTune(src_model), extra=src_model.vocab_hash
        )
    elif m.mode in REG_MODES:
        src_model = train_cached("train-source", source_own, Tgt())
        reg_cfg = cfg
        if reg_cfg.reg_weight <= 0:
            raise ValueError(f"mode {m.mode!r} requires train.reg_weight > 0")
        if m.mode == "reg-freq":
            reg = Regularizer.from_frequency(
                source_own.vocabulary, target.vocabulary, src_model
            )
            extra = "freq"
        else:  # reg-sense: score by drift-stability of each shared word
            prelim = train_cached("train-target", target, Tgt())
            report = build_report(
                src_model,
                prelim,
                k=m.drift_k,
                lam=m.drift_lambda,
                top_m=m.drift_top_m,
                tgt_counts=target.vocabulary.counts,
            )
            report.save_tsv(out / "drift.tsv")
            artifacts["drift"] = out / "drift.tsv"
            figures.wscore_histogram(report.wscores(), out / "drift_hist.png")
            artifacts["drift_figure"] = out / "drift_hist.png"
            reg = Regularizer.from_scores(
                target.vocabulary, src_model, report.wscores()
            )
            extra = f"sense:k={m.drift_k}:lam={m.drift_lambda:g}:top_m={m.drift_top_m}"
        model = train_cached(
            "train-regularized",
            target,
            Reg(reg, source_model=src_model),
            extra=extra + ":" + src_model.vocab_hash,
            config=reg_cfg,
        )
    elif m.mode == "src-plus-tgt":
        key = runner.key_of(
            "train-joint-full", tgt_hash, corpus_hash(source_tv), _config_key(cfg)
        )
        model = runner.model_stage(
            "train-joint-full",
            key,
            lambda: src_plus_tgt_train(target, source_tv, cfg),
        )
    elif m.mode in SRCSEL_MODES:
        model = _run_srcsel(m, runner, out, target, source_own, source_tv, artifacts)
    else:  # pragma: no cover - manifest validation rejects unknown modes
        raise ValueError(f"unknown mode {m.mode!r}")

    export_embeddings(model, out / "embeddings.txt")
    artifacts["embeddings"] = out / "embeddings.txt"

    eval_corpus = target
    if model.vocab_hash != target.vocabulary.hash():
        # The model carries its own vocabulary (src mode); re-encode the
        # target documents with it for evaluation.
        docs = read_documents(m.target, paragraph_mode=m.paragraph_mode)
        from adaptembed.corpus import Vocabulary

        counts = np.zeros(len(model.words), dtype=np.int64)
        flat = [t for doc in docs for t in doc if t in model.id_of]
        for t in flat:
            counts[model.id_of[t]] += 1
        if counts.sum() == 0:
            raise ValueError("target corpus shares no words with the model")
        vocab = Vocabulary(model.words, counts, dict(model.id_of))
        eval_corpus = encode(docs, vocab)

    metrics = {
        "awpp": awpp(model, eval_corpus, AwppConfig(seed=m.seed, window=cfg.window)),
        "awpp_perplexity": awpp_perplexity(
            model, eval_corpus, AwppConfig(seed=m.seed, window=cfg.window)
        ),
    }
    save_metrics_tsv(metrics, out / "awpp.tsv")
    artifacts["report"] = out / "awpp.tsv"
    figures.metrics_bar(metrics, out / "awpp.png")
    artifacts["report_figure"] = out / "awpp.png"
    return artifacts


def _run_srcsel(
    m: Manifest,
    runner: StageRunner,
    out: Path,
    target: Corpus,
    source_own: Corpus | None,
    source_tv: Corpus,
    artifacts: dict[str, Path],
) -> EmbeddingModel:
    cfg = m.train
    tgt_hash = corpus_hash(target)
    src_hash = corpus_hash(source_tv)

    scorer = runner.model_stage(
        "train-target",
        runner.key_of("train-target", tgt_hash, _config_key(cfg)),
        lambda: train(target, cfg, Tgt()),
    )

    index = index_source(source_tv)
    retrievals = [retrieve(index, doc, m.top_r) for doc in target.docs]
    n_queries = len(retrievals)
    order = substream(m.seed, STREAM_QUERY_SPLIT).permutation(n_queries)
    n_held = int(round(QUERY_HELDOUT_FRACTION * n_queries))
    heldout_queries = sorted(order[:n_held].tolist())
    selection = retain(
        retrievals,
        min_votes=m.min_votes,
        heldout_queries=heldout_queries,
        cutoff_quantiles=m.cutoff_quantiles,
    )
    selection.save_tsv(out / "selection.tsv")
    artifacts["selection"] = out / "selection.tsv"
    figures.selection_histogram(selection, out / "selection.png")
    artifacts["selection_figure"] = out / "selection.png"

    lam, alpha = m.drift_lambda, m.alpha
    if m.calibrate:
        key = runner.key_of(
            "calibrate",
            tgt_hash,
            _config_key(cfg),
            f"{m.lambda_grid}:{m.alpha_grid}:{m.heldout_fraction:g}:{m.seed}",
        )
        payload = runner.json_stage(
            "calibrate", key, lambda: _calibration_payload(m, target, cfg)
        )
        lam, alpha = payload["lambda"], payload["alpha"]
        result = _payload_to_result(payload)
        result.save_tsv(out / "calibration.tsv")
        artifacts["calibration"] = out / "calibration.tsv"
        figures.calibration_heatmap(result, out / "calibration.png")
        artifacts["calibration_figure"] = out / "calibration.png"

    if m.mode == "srcsel-word":
        src_model = runner.model_stage(
            "train-source",
            runner.key_of("train-source", corpus_hash(source_own), _config_key(cfg)),
            lambda: train(source_own, cfg, Tgt()),
        )
        report = build_report(
            src_model,
            scorer,
            k=m.drift_k,
            lam=lam,
            top_m=m.drift_top_m,
            tgt_counts=target.vocabulary.counts,
        )
        report.save_tsv(out / "drift.tsv")
        artifacts["drift"] = out / "drift.tsv"
        figures.wscore_histogram(report.wscores(), out / "drift_hist.png")
        artifacts["drift_figure"] = out / "drift_hist.png"
        weighting = SnippetWeighting(mode="word", word_scores=report.wscores())
    elif m.mode == "srcsel-r":
        weighting = SnippetWeighting(mode="unweighted")
    else:  # srcsel, srcsel-c
        weighting = SnippetWeighting(mode="context", alpha=alpha)

    retained = sorted(selection.retained)
    key = runner.key_of(
        "train-joint",
        tgt_hash,
        src_hash,
        _config_key(cfg),
        f"{m.mode}:{retained}:{weighting.mode}:{alpha:g}:{lam:g}",
    )
    return runner.model_stage(
        "train-joint",
        key,
        lambda: joint_train(
            target,
            source_tv,
            retained,
            scorer,
            weighting,
            cfg,
            random_inject=(m.mode == "srcsel-c"),
        ),
    )


def _calibration_payload(m: Manifest, target: Corpus, cfg: TrainConfig) -> dict:
    result = calibrate(
        target,
        m.lambda_grid,
        m.alpha_grid,
        heldout_fraction=m.heldout_fraction,
        seed=m.seed,
        config=cfg,
        top_m=m.drift_top_m,
        k=m.drift_k,
    )
    return {
        "lambda": result.lam,
        "alpha": result.alpha,
        "diagnostics": [
            [g.lam, g.alpha, g.wscore_heldout, g.wscore_jumbled,
             g.sscore_heldout, g.sscore_jumbled]
            for g in result.diagnostics
        ],
    }


def _payload_to_result(payload: dict) -> CalibrationResult:
    diags = [GridPoint(*row) for row in payload["diagnostics"]]
    return CalibrationResult(payload["lambda"], payload["alpha"], diags)


# ---------------------------------------------------------------------------
# Cross-run comparison


@dataclass
class ComparisonTable:
    labels: tuple[str, ...]
    metrics: tuple[str, ...]
    mean: np.ndarray  # labels x metrics
    std: np.ndarray
    runs: dict[str, int]

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method\truns\t" + "\t".join(self.metrics) + "\n")
            for i, label in enumerate(self.labels):
                cells = [
                    f"{self.mean[i, j]:.6f}±{self.std[i, j]:.6f}"
                    for j in range(len(self.metrics))
                ]
                fh.write(f"{label}\t{self.runs[label]}\t" + "\t".join(cells) + "\n")

    def to_markdown(self) -> str:
        head = "| method | runs | " + " | ".join(self.metrics) + " |"
        sep = "|" + "---|" * (len(self.metrics) + 2)
        rows = []
        for i, label in enumerate(self.labels):
            cells = [
                f"{self.mean[i, j]:.4f} ± {self.std[i, j]:.4f}"
                for j in range(len(self.metrics))
            ]
            rows.append(f"| {label} | {self.runs[label]} | " + " | ".join(cells) + " |")
        return "\n".join([head, sep] + rows) + "\n"


def read_metrics_tsv(path: str | Path) -> dict[str, float]:
    metrics: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["metric", "value"]:
            raise ValueError(f"{path}: not a metric report (header {header})")
        for line in fh:
            key, value = line.rstrip("\n").split("\t")
            metrics[key] = float(value)
    return metrics


def compare(
    report_paths: Sequence[str | Path],
    labels: Sequence[str] | None = None,
) -> ComparisonTable:
    """Aggregate metric reports into a methods x metrics mean±stddev table.

    Reports with the same label (by default, the name of the directory
    containing the report) are treated as repeated-seed runs of one method;
    stddev is the sample standard deviation (0 for a single run).  All
    reports must share one metric schema.
    """
    if not report_paths:
        raise ValueError("no reports given")
    if labels is None:
        labels = [Path(p).resolve().parent.name for p in report_paths]
    if len(labels) != len(report_paths):
        raise ValueError("labels and report_paths must align")
    loaded = [read_metrics_tsv(p) for p in report_paths]
    schema = tuple(sorted(loaded[0]))
    for path, metrics in zip(report_paths, loaded):
        if tuple(sorted(metrics)) != schema:
            raise ValueError(
                f"{path}: metric schema {sorted(metrics)} != {list(schema)}"
            )
    ordered_labels = tuple(dict.fromkeys(labels))
    mean = np.zeros((len(ordered_labels), len(schema)))
    std = np.zeros_like(mean)
    runs: dict[str, int] = {}
    for i, label in enumerate(ordered_labels):
        rows = np.array(
            [
                [metrics[k] for k in schema]
                for l, metrics in zip(labels, loaded)
                if l == label
            ]
        )
        runs[label] = rows.shape[0]
        mean[i] = rows.mean(axis=0)
        std[i] = rows.std(axis=0, ddof=1) if rows.shape[0] > 1 else 0.0
    return ComparisonTable(ordered_labels, schema, mean, std, runs)
