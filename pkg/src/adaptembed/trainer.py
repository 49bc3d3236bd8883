"""CBOW negative-sampling training and its transfer variants.

A single parameterized SGD step (:func:`cbow_step`) underlies every mode:
target-only, fine-tuning from source embeddings, and regularized training
that pulls selected words toward their source vectors.  The epoch loop runs
through a numba kernel implementing the same update; ``workers=1`` is
bit-exact reproducible, ``workers>1`` uses racy hogwild updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adaptembed import kernels
from adaptembed.corpus import Corpus, Vocabulary, WindowSample

EPOCH_GRID = (5, 20, 80, 160, 200, 250)
REG_WEIGHT_GRID = (0.1, 1.0, 10.0, 50.0)

# Named RNG sub-streams so every stage draws from an independent stream of
# the one experiment seed.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_NEGATIVES = 3
STREAM_PERMUTE = 4
STREAM_SPLIT = 5
STREAM_INJECT = 6


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass
class TrainConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.05
    distortion: float = 0.75
    seed: int = 0
    workers: int = 1
    reg_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("dim, window, negatives must be positive")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be nonnegative")


@dataclass
class EmbeddingModel:
    """Paired focus/context matrices over a word list.

    ``context`` is None for models loaded from an exported embedding file,
    which carries only the focus matrix.
    """

    words: tuple[str, ...]
    focus: np.ndarray
    context: np.ndarray | None
    vocab_hash: str = ""
    id_of: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.id_of:
            self.id_of = {w: i for i, w in enumerate(self.words)}
        if not np.all(np.isfinite(self.focus)):
            raise ValueError("focus matrix contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.focus.shape[1]

    def representation(self) -> np.ndarray:
        """The per-word vectors used for similarity: focus + context.

        The focus and context matrices each develop a strong shared
        direction during training (the two are anti-aligned), so cosines
        within either matrix are offset by a large common term.  Their sum
        cancels it, which is what nearest-neighbor and stability scoring
        need; models loaded from an exported file carry the sum already.
        """
        if self.context is None:
            return self.focus
        return self.focus + self.context

    def __len__(self) -> int:
        return len(self.words)

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.words,
            self.focus.copy(),
            None if self.context is None else self.context.copy(),
            self.vocab_hash,
        )


class NegativeSampler:
    """Alias-table sampler with probability proportional to count^distortion."""

    def __init__(self, counts: np.ndarray, distortion: float = 0.75):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0 or counts.sum() <= 0:
            raise ValueError("sampler needs nonzero counts")
        weights = np.power(counts, distortion, where=counts > 0)
        weights[counts <= 0] = 0.0
        self.probabilities = weights / weights.sum()
        self.prob, self.alias = _build_alias(self.probabilities)

    def sample(
        self,
        rng: np.random.Generator,
        n: int,
        exclude: int | None = None,
    ) -> list[int]:
        out = []
        size = self.prob.shape[0]
        while len(out) < n:
            u1, u2 = rng.random(), rng.random()
            j = min(int(u1 * size), size - 1)
            draw = j if u2 < self.prob[j] else int(self.alias[j])
            if draw == exclude:
                continue
            out.append(draw)
        return out


def _build_alias(probabilities: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    size = probabilities.shape[0]
    prob = np.zeros(size, dtype=np.float64)
    alias = np.zeros(size, dtype=np.int32)
    scaled = probabilities * size
    small = [i for i in range(size) if scaled[i] < 1.0]
    large = [i for i in range(size) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i] = 1.0
    return prob, alias


@dataclass
class Regularizer:
    """Per-word pull toward source focus vectors.

    ``score`` is in [0,1] and is zero for words absent from the source, so
    those rows never feel the penalty.
    """

    source_focus: np.ndarray  # aligned to the target vocabulary
    score: np.ndarray  # per target word, float32

    def __post_init__(self) -> None:
        if self.source_focus.shape[0] != self.score.shape[0]:
            raise ValueError("source_focus and score must be aligned")
        if np.any((self.score < 0) | (self.score > 1)):
            raise ValueError("scores must lie in [0, 1]")

    @classmethod
    def from_scores(
        cls,
        tgt_vocab: Vocabulary,
        source_model: EmbeddingModel,
        scores: dict[str, float],
        dtype=np.float32,
    ) -> "Regularizer":
        dim = source_model.dim
        rows = np.zeros((len(tgt_vocab), dim), dtype=dtype)
        svals = np.zeros(len(tgt_vocab), dtype=np.float32)
        for word, i in tgt_vocab.id_of.items():
            j = source_model.id_of.get(word)
            if j is None:
                continue
            rows[i] = source_model.focus[j]
            svals[i] = scores.get(word, 0.0)
        return cls(rows, svals)

    @classmethod
    def from_frequency(
        cls,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        source_model: EmbeddingModel,
        dtype=np.float32,
    ) -> "Regularizer":
        scores = {
            w: frequency_score(src_vocab, tgt_vocab, w) for w in tgt_vocab.words
        }
        return cls.from_scores(tgt_vocab, source_model, scores, dtype=dtype)


def frequency_score(vocab_src: Vocabulary, vocab_tgt: Vocabulary, word: str) -> float:
    """Harmonic mean of the word's relative frequencies in the two corpora.

    Zero for words absent from the source.
    """
    if word not in vocab_tgt:
        raise KeyError(f"{word!r} not in target vocabulary")
    if word not in vocab_src:
        return 0.0
    f_s = vocab_src.counts[vocab_src.id_of[word]] / vocab_src.total_tokens
    f_t = vocab_tgt.counts[vocab_tgt.id_of[word]] / vocab_tgt.total_tokens
    if f_s + f_t == 0:
        return 0.0
    return float(2.0 * f_s * f_t / (f_s + f_t))


def init_model(
    vocab: Vocabulary,
    dim: int,
    seed: int,
    source_embeddings: EmbeddingModel | None = None,
    dtype=np.float32,
) -> EmbeddingModel:
    """Uniform[-0.5/dim, 0.5/dim] focus rows, zero context rows.

    Rows for words present in ``source_embeddings`` are copied instead
    (context rows too when the source model carries them).
    """
    rng = substream(seed, STREAM_INIT)
    focus = ((rng.random((len(vocab), dim)) - 0.5) / dim).astype(dtype)
    context = np.zeros((len(vocab), dim), dtype=dtype)
    if source_embeddings is not None:
        if source_embeddings.dim != dim:
            raise ValueError(
                f"source dim {source_embeddings.dim} != requested dim {dim}"
            )
        for word, i in vocab.id_of.items():
            j = source_embeddings.id_of.get(word)
            if j is None:
                continue
            focus[i] = source_embeddings.focus[j]
            if source_embeddings.context is not None:
                context[i] = source_embeddings.context[j]
    return EmbeddingModel(vocab.words, focus, context, vocab.hash())


def _sigmoid(x: float) -> float:
    if x >= 0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


def cbow_step(
    model: EmbeddingModel,
    sample: WindowSample,
    sampler: NegativeSampler | None,
    lr: float,
    weight: float = 1.0,
    regularizer: Regularizer | None = None,
    rho: float = 1.0,
    rng: np.random.Generator | None = None,
    negatives: Sequence[int] | None = None,
    k: int = 5,
) -> float:
    """One weighted SGD step; returns the loss (negated objective).

    Updates the focus row of the sample's word, the focus rows of the k
    sampled negatives, and every context row, by the exact gradient of

        weight * [-log s(u_w.v_C) - sum_neg log s(-u_neg.v_C)]
        + rho * score(w) * ||u_w - u_src_w||^2

    where v_C is the arithmetic mean of the context rows.  All gradients are
    evaluated at the pre-step parameter values.  ``negatives`` overrides the
    sampler draw (used by gradient tests).
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not sample.context:
        raise ValueError("context must be non-empty")
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    U, V = model.focus, model.context
    focus = sample.focus
    ctx = np.asarray(sample.context, dtype=np.int64)
    v_c = V[ctx].mean(axis=0)
    if negatives is None:
        if rng is None:
            raise ValueError("rng required when negatives are drawn")
        negatives = sampler.sample(rng, k, exclude=focus)
    loss = 0.0
    err = np.zeros(model.dim, dtype=U.dtype)
    reg_delta = None
    reg_coef = 0.0
    if regularizer is not None and rho > 0 and regularizer.score[focus] > 0:
        diff = U[focus] - regularizer.source_focus[focus]
        coef = rho * float(regularizer.score[focus])
        loss += coef * float(diff @ diff)
        # One step never overshoots the source vector (the penalty's own
        # minimizer); below the clamp this is exactly -lr times the gradient.
        reg_coef = min(2.0 * coef * lr, 1.0)
        reg_delta = diff
    for tgt, label in [(focus, 1.0)] + [(n, 0.0) for n in negatives]:
        f = float(U[tgt] @ v_c)
        sig = _sigmoid(f)
        p = sig if label else 1.0 - sig
        loss -= weight * math.log(max(p, 1e-12))
        g = weight * (label - sig)
        err += g * U[tgt]
        U[tgt] = U[tgt] + lr * g * v_c
    if reg_delta is not None:
        U[focus] -= reg_coef * reg_delta
    np.add.at(V, ctx, lr * err / len(ctx))
    return loss


# ---------------------------------------------------------------------------
# Sample streams and the epoch driver


@dataclass
class SampleArrays:
    """Flattened window samples ready for the kernel."""

    focus: np.ndarray  # int32
    ctx_flat: np.ndarray  # int32
    ctx_off: np.ndarray  # int64, len n+1
    weights: np.ndarray  # float32
    origin: np.ndarray  # uint8: which negative sampler a sample uses

    def __len__(self) -> int:
        return self.focus.shape[0]

    @staticmethod
    def concat(parts: Sequence["SampleArrays"]) -> "SampleArrays":
        focus = np.concatenate([p.focus for p in parts])
        ctx_flat = np.concatenate([p.ctx_flat for p in parts])
        offs = [parts[0].ctx_off]
        for p in parts[1:]:
            offs.append(p.ctx_off[1:] + offs[-1][-1])
        ctx_off = np.concatenate(offs)
        weights = np.concatenate([p.weights for p in parts])
        origin = np.concatenate([p.origin for p in parts])
        return SampleArrays(focus, ctx_flat, ctx_off, weights, origin)


def build_window_arrays(
    docs: Sequence[np.ndarray],
    window: int,
    drop_focus_repeats: bool = False,
    origin: int = 0,
) -> SampleArrays:
    """Flatten fixed-window samples; positions with empty context are skipped.

    ``drop_focus_repeats`` removes occurrences of the focus word from its own
    context (applied to imported source snippets).
    """
    foc: list[int] = []
    ctx: list[int] = []
    off: list[int] = [0]
    for doc in docs:
        arr = doc.tolist()
        n = len(arr)
        for t in range(n):
            lo = max(0, t - window)
            hi = min(n, t + window + 1)
            w = arr[t]
            if drop_focus_repeats:
                c = [arr[j] for j in range(lo, hi) if j != t and arr[j] != w]
            else:
                c = [arr[j] for j in range(lo, hi) if j != t]
            if not c:
                continue
            foc.append(w)
            ctx.extend(c)
            off.append(len(ctx))
    n = len(foc)
    return SampleArrays(
        np.array(foc, dtype=np.int32),
        np.array(ctx, dtype=np.int32),
        np.array(off, dtype=np.int64),
        np.ones(n, dtype=np.float32),
        np.full(n, origin, dtype=np.uint8),
    )


def run_training(
    model: EmbeddingModel,
    samples: SampleArrays,
    config: TrainConfig,
    sampler0: NegativeSampler,
    sampler1: NegativeSampler | None = None,
    regularizer: Regularizer | None = None,
) -> list[float]:
    """Drive ``config.epochs`` shuffled passes of the kernel over ``samples``.

    The learning rate decays linearly from initial_lr to initial_lr/10000
    over the full run.  Returns the per-epoch loss.
    """
    n = len(samples)
    if n == 0:
        return []
    if sampler1 is None:
        sampler1 = sampler0
    shuffle_rng = substream(config.seed, STREAM_SHUFFLE)
    neg_seed = int(
        substream(config.seed, STREAM_NEGATIVES).integers(0, 2**63, dtype=np.int64)
    )
    total = config.epochs * n
    lr_end = config.initial_lr / 10_000.0
    losses = []
    reg_score = reg_rows = None
    if regularizer is not None and config.reg_weight > 0:
        reg_score = np.ascontiguousarray(regularizer.score, dtype=np.float32)
        reg_rows = np.ascontiguousarray(
            regularizer.source_focus, dtype=model.focus.dtype
        )
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n).astype(np.int64)
        loss = kernels.train_epoch(
            model.focus,
            model.context,
            samples.focus,
            samples.ctx_flat,
            samples.ctx_off,
            order,
            samples.weights,
            samples.origin,
            sampler0.prob,
            sampler0.alias,
            sampler1.prob,
            sampler1.alias,
            config.negatives,
            config.initial_lr,
            lr_end,
            total,
            epoch * n,
            neg_seed,
            epoch,
            rho=config.reg_weight if reg_score is not None else 0.0,
            reg_score=reg_score,
            reg_rows=reg_rows,
            workers=config.workers,
        )
        losses.append(loss)
    return losses


# ---------------------------------------------------------------------------
# Training modes


@dataclass
class Tgt:
    pass


@dataclass
class SrcTune:
    source_model: EmbeddingModel


@dataclass
class Reg:
    regularizer: Regularizer
    source_model: EmbeddingModel | None = None


def train(
    corpus: Corpus,
    config: TrainConfig,
    mode: Tgt | SrcTune | Reg = Tgt(),
) -> EmbeddingModel:
    """Train an embedding model on ``corpus`` in the given mode."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if isinstance(mode, Tgt):
        model = init_model(corpus.vocabulary, config.dim, config.seed)
        regularizer = None
    elif isinstance(mode, SrcTune):
        model = init_model(
            corpus.vocabulary, config.dim, config.seed, mode.source_model
        )
        regularizer = None
    elif isinstance(mode, Reg):
        model = init_model(
            corpus.vocabulary, config.dim, config.seed, mode.source_model
        )
        regularizer = mode.regularizer
        if config.reg_weight <= 0:
            raise ValueError("Reg mode requires reg_weight > 0")
    else:
        raise TypeError(f"unknown mode {mode!r}")
    samples = build_window_arrays(corpus.docs, config.window)
    sampler = NegativeSampler(corpus.vocabulary.counts, config.distortion)
    run_training(model, samples, config, sampler, regularizer=regularizer)
    return model


# ---------------------------------------------------------------------------
# Embedding file I/O (word2vec text format)


def export_embeddings(
    model: EmbeddingModel,
    path: str | Path,
    unit_normalize: bool = True,
) -> None:
    """Write the word representation matrix in word2vec text format.

    With ``unit_normalize``, each row is scaled to unit L2 norm (zero rows
    are left as zero).
    """
    rows = model.representation().astype(np.float64)
    if unit_normalize:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = np.divide(rows, norms, out=rows.copy(), where=norms > 0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(model.words)} {model.dim}\n")
        for word, row in zip(model.words, rows):
            fh.write(word + " " + " ".join(f"{x:.6f}" for x in row) + "\n")


def load_embeddings(path: str | Path, dtype=np.float32) -> EmbeddingModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        count, dim = int(header[0]), int(header[1])
        words = []
        focus = np.empty((count, dim), dtype=dtype)
        for i in range(count):
            parts = fh.readline().rstrip("\n").split(" ")
            words.append(parts[0])
            focus[i] = [float(x) for x in parts[1 : dim + 1]]
    return EmbeddingModel(tuple(words), focus, None)
