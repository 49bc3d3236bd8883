"""Intrinsic and lightweight extrinsic evaluation of embedding models.

AWPP is a sampled-softmax probability of each focus word given its context,
averaged over a corpus; the classifier is one-layer softmax regression over
averaged token embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adaptembed.corpus import Corpus
from adaptembed.drift import knn
from adaptembed.trainer import EmbeddingModel, NegativeSampler


@dataclass
class AwppConfig:
    n_negatives: int = 20
    seed: int = 0
    window: int = 5

    def __post_init__(self) -> None:
        if self.n_negatives < 1:
            raise ValueError("n_negatives must be >= 1")


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def _awpp_sums(
    model: EmbeddingModel, corpus: Corpus, config: AwppConfig
) -> tuple[float, float, int]:
    R = model.representation().astype(np.float64)
    U = _unit_rows(R)
    V = R
    sampler = NegativeSampler(corpus.vocabulary.counts, distortion=1.0)
    rng = np.random.default_rng(config.seed)
    total_p = 0.0
    total_logp = 0.0
    count = 0
    w = config.window
    for doc in corpus.docs:
        n = len(doc)
        for t in range(n):
            lo, hi = max(0, t - w), min(n, t + w + 1)
            if hi - lo <= 1:
                continue
            ctx = [int(doc[j]) for j in range(lo, hi) if j != t]
            c = V[ctx].mean(axis=0)
            cn = np.linalg.norm(c)
            cu = c / cn if cn > 0 else c
            negatives = sampler.sample(rng, config.n_negatives)
            cands = [int(doc[t])] + negatives
            cos = U[cands] @ cu
            e = np.exp(cos)
            p = e[0] / e.sum()
            total_p += p
            total_logp += math.log(p)
            count += 1
    if count == 0:
        raise ValueError("corpus has no usable windows")
    return total_p, total_logp, count


def awpp(model: EmbeddingModel, corpus: Corpus, config: AwppConfig) -> float:
    """Mean prediction probability of each focus word given its context.

    Per window: exp(cos(u_w, c)) / sum over {w, n sampled negatives} of
    exp(cos(u_v, c)), where c is the mean of the context rows.  Negatives are
    drawn from the plain (undistorted) unigram table.  Higher is better.
    """
    total_p, _, count = _awpp_sums(model, corpus, config)
    return total_p / count


def awpp_perplexity(model: EmbeddingModel, corpus: Corpus, config: AwppConfig) -> float:
    """exp(-mean log p) companion number for the same sampled softmax."""
    _, total_logp, count = _awpp_sums(model, corpus, config)
    return math.exp(-total_logp / count)


def neighbor_table(
    models: dict[str, EmbeddingModel],
    probe_words: Sequence[str],
    k: int = 10,
) -> dict[str, dict[str, list[tuple[str, float]]]]:
    """Per probe, the K nearest neighbors with cosines under each model.

    Probes missing from a model are flagged with an empty list.
    """
    out: dict[str, dict[str, list[tuple[str, float]]]] = {}
    reps = {name: m.representation() for name, m in models.items()}
    normed = {name: _unit_rows(r.astype(np.float64)) for name, r in reps.items()}
    for probe in probe_words:
        per_model: dict[str, list[tuple[str, float]]] = {}
        for name, model in models.items():
            idx = model.id_of.get(probe)
            if idx is None:
                per_model[name] = []
                continue
            rows = normed[name]
            ids = knn(reps[name], idx, k)
            cos = rows[ids] @ rows[idx]
            per_model[name] = [
                (model.words[i], float(c)) for i, c in zip(ids, cos)
            ]
        out[probe] = per_model
    return out


def format_neighbor_table(
    table: dict[str, dict[str, list[tuple[str, float]]]],
) -> str:
    lines = []
    for probe, per_model in table.items():
        lines.append(f"== {probe}")
        for name, neighbors in per_model.items():
            if not neighbors:
                lines.append(f"  {name:>12}  (probe missing)")
                continue
            cell = "  ".join(f"{w}:{c:.3f}" for w, c in neighbors)
            lines.append(f"  {name:>12}  {cell}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# One-layer average-embedding classifier


@dataclass
class ClassifierModel:
    weights: np.ndarray  # classes x dim
    bias: np.ndarray  # classes
    labels: tuple[str, ...]
    train_class_counts: dict[str, int] = field(default_factory=dict)

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits = features @ self.weights.T + self.bias
        return np.argmax(logits, axis=1)


def doc_features(
    docs: Sequence[Sequence[str]],
    model: EmbeddingModel,
) -> np.ndarray:
    """Mean of unit-normalized token embeddings, dropping OOV tokens.

    Documents emptied by the dropping get the zero vector (kept so metric
    denominators match the corpus).
    """
    rows = _unit_rows(model.representation().astype(np.float64))
    feats = np.zeros((len(docs), model.dim))
    for i, doc in enumerate(docs):
        ids = [model.id_of[t] for t in doc if t in model.id_of]
        if ids:
            feats[i] = rows[ids].mean(axis=0)
    return feats


def softmax_xent_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients of one cross-entropy term (for SGD and tests)."""
    logits = weights @ x + bias
    logits -= logits.max()
    e = np.exp(logits)
    p = e / e.sum()
    loss = -math.log(max(p[y], 1e-300))
    d = p.copy()
    d[y] -= 1.0
    return loss, np.outer(d, x), d


def train_classifier(
    docs_with_labels: Sequence[tuple[Sequence[str], str]],
    embeddings: EmbeddingModel,
    epochs: int = 50,
    lr: float = 0.5,
    seed: int = 0,
) -> ClassifierModel:
    """Softmax regression via SGD on averaged token embeddings."""
    labels = sorted({label for _, label in docs_with_labels})
    if len(labels) < 2:
        raise ValueError("need at least two classes")
    label_of = {l: i for i, l in enumerate(labels)}
    feats = doc_features([d for d, _ in docs_with_labels], embeddings)
    ys = np.array([label_of[l] for _, l in docs_with_labels])
    counts = {l: 0 for l in labels}
    for _, l in docs_with_labels:
        counts[l] += 1
    weights = np.zeros((len(labels), embeddings.dim))
    bias = np.zeros(len(labels))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(ys)):
            _, gw, gb = softmax_xent_grad(weights, bias, feats[i], int(ys[i]))
            weights -= lr * gw
            bias -= lr * gb
    return ClassifierModel(weights, bias, tuple(labels), counts)


def classifier_metrics(
    model: ClassifierModel,
    test_docs: Sequence[tuple[Sequence[str], str]],
    embeddings: EmbeddingModel,
) -> dict[str, float]:
    """Micro accuracy, macro accuracy, and macro over the rarest half.

    The rare set is the ceil(C/2) classes with the fewest training documents
    (ties broken by label for determinism).
    """
    label_of = {l: i for i, l in enumerate(model.labels)}
    for _, l in test_docs:
        if l not in label_of:
            raise ValueError(f"unseen label {l!r}")
    feats = doc_features([d for d, _ in test_docs], embeddings)
    ys = np.array([label_of[l] for _, l in test_docs])
    preds = model.predict(feats)
    micro = float(np.mean(preds == ys))
    per_class = []
    for c in range(len(model.labels)):
        mask = ys == c
        per_class.append(float(np.mean(preds[mask] == c)) if mask.any() else np.nan)
    macro = float(np.nanmean(per_class))
    order = sorted(
        model.labels, key=lambda l: (model.train_class_counts.get(l, 0), l)
    )
    n_rare = math.ceil(len(model.labels) / 2)
    rare = {label_of[l] for l in order[:n_rare]}
    rare_vals = [per_class[c] for c in rare if not math.isnan(per_class[c])]
    rare_macro = float(np.mean(rare_vals)) if rare_vals else float("nan")
    return {"micro": micro, "macro": macro, "rare_macro": rare_macro}


def save_metrics_tsv(metrics: dict[str, float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\n")
        for key in sorted(metrics):
            fh.write(f"{key}\t{metrics[key]:.6f}\n")
