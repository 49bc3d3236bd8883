"""Retrieval-based source selection and weighted joint training.

Source documents are indexed in an in-memory BM25 inverted index, retrieved
with each target document as a query, retained by vote count plus a
cumulative-score cutoff, and then jointly trained with the target corpus
with a per-snippet weight.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from adaptembed.corpus import Corpus
from adaptembed.trainer import (
    EmbeddingModel,
    NegativeSampler,
    SampleArrays,
    TrainConfig,
    build_window_arrays,
    init_model,
    run_training,
    substream,
    STREAM_INJECT,
)

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_TOP_R = 10
DEFAULT_MIN_VOTES = 2
DEFAULT_CUTOFF_QUANTILES = (0.0, 0.25, 0.5, 0.75)
RANDOM_INJECT_FRACTION = 0.05


@dataclass
class InvertedIndex:
    postings: dict[int, tuple[np.ndarray, np.ndarray]]  # term -> (doc_ids, tfs)
    doc_lengths: np.ndarray
    avg_doc_length: float
    doc_count: int

    def idf(self, term: int) -> float:
        posting = self.postings.get(term)
        df = 0 if posting is None else len(posting[0])
        return float(np.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5)))


def index_source(source_corpus: Corpus) -> InvertedIndex:
    """Build a BM25-ready inverted index over the source documents."""
    if len(source_corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    raw: dict[int, dict[int, int]] = {}
    lengths = np.zeros(len(source_corpus), dtype=np.int64)
    for doc_id, doc in enumerate(source_corpus.docs):
        lengths[doc_id] = len(doc)
        for term in doc.tolist():
            raw.setdefault(term, {})
            raw[term][doc_id] = raw[term].get(doc_id, 0) + 1
    postings = {}
    for term, per_doc in raw.items():
        doc_ids = np.array(sorted(per_doc), dtype=np.int64)
        tfs = np.array([per_doc[d] for d in doc_ids], dtype=np.int64)
        postings[term] = (doc_ids, tfs)
    return InvertedIndex(postings, lengths, float(lengths.mean()), len(source_corpus))


def retrieve(
    index: InvertedIndex,
    target_doc: np.ndarray | Sequence[int],
    top_r: int,
) -> list[tuple[int, float]]:
    """BM25-ranked (doc_id, score) for the target document used as a query.

    Query terms count with multiplicity; ties break by ascending doc_id.
    An all-OOV query returns an empty list.
    """
    if top_r < 1:
        raise ValueError("top_r must be >= 1")
    scores = np.zeros(index.doc_count, dtype=np.float64)
    terms, qtf = np.unique(np.asarray(target_doc, dtype=np.int64), return_counts=True)
    hit = np.zeros(index.doc_count, dtype=bool)
    for term, qcount in zip(terms.tolist(), qtf.tolist()):
        posting = index.postings.get(term)
        if posting is None:
            continue
        doc_ids, tfs = posting
        idf = index.idf(term)
        dl = index.doc_lengths[doc_ids]
        denom = tfs + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avg_doc_length)
        scores[doc_ids] += qcount * idf * tfs * (BM25_K1 + 1.0) / denom
        hit[doc_ids] = True
    matched = np.flatnonzero(hit)
    if matched.size == 0:
        return []
    order = np.lexsort((matched, -scores[matched]))
    picked = matched[order[:top_r]]
    return [(int(d), float(scores[d])) for d in picked]


@dataclass
class SelectionResult:
    """Retained source doc ids with their votes and cumulative scores."""

    retained: frozenset[int]
    votes: dict[int, int]
    cumulative_score: dict[int, float]
    cutoff: float
    cutoff_quantile: float

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("doc_id\tvotes\tcumulative_score\tretained\n")
            for doc_id in sorted(self.votes):
                fh.write(
                    f"{doc_id}\t{self.votes[doc_id]}\t"
                    f"{self.cumulative_score[doc_id]:.6f}\t"
                    f"{int(doc_id in self.retained)}\n"
                )


def retain(
    all_retrievals: Sequence[list[tuple[int, float]]],
    min_votes: int = DEFAULT_MIN_VOTES,
    heldout_queries: Sequence[int] = (),
    cutoff_quantiles: Sequence[float] = DEFAULT_CUTOFF_QUANTILES,
) -> SelectionResult:
    """Apply the vote and cumulative-score tests to per-query top lists.

    Votes and cumulative scores are accumulated over every target query.  The
    cutoff is the candidate quantile of cumulative score that maximizes the
    mean BM25 score the retained documents achieve on the held-out queries
    (documents absent from a held-out top list score 0 there).  An empty
    retention is a warning state, not an error.
    """
    votes: dict[int, int] = {}
    cumulative: dict[int, float] = {}
    for ranked in all_retrievals:
        for doc_id, score in ranked:
            votes[doc_id] = votes.get(doc_id, 0) + 1
            cumulative[doc_id] = cumulative.get(doc_id, 0.0) + score
    voted = sorted(d for d, v in votes.items() if v >= min_votes)
    if not voted:
        logger.warning("retention is empty; joint training degrades to target-only")
        return SelectionResult(frozenset(), votes, cumulative, 0.0, 0.0)
    cums = np.array([cumulative[d] for d in voted])
    heldout = [all_retrievals[q] for q in heldout_queries]
    best = None
    for q in sorted(cutoff_quantiles):
        cutoff = float(np.quantile(cums, q))
        retained = [d for d in voted if cumulative[d] >= cutoff]
        if not retained:
            continue
        if heldout:
            rset = set(retained)
            total = sum(
                score
                for ranked in heldout
                for doc_id, score in ranked
                if doc_id in rset
            )
            mean_score = total / (len(heldout) * len(retained))
        else:
            mean_score = 0.0
        if best is None or mean_score > best[0]:
            best = (mean_score, q, cutoff, retained)
    _, q, cutoff, retained = best
    return SelectionResult(frozenset(retained), votes, cumulative, cutoff, q)


@dataclass
class SnippetWeighting:
    """How imported source samples are weighted during joint training.

    mode 'context' uses exp(alpha * cos(u_w, v_C)) from the target scoring
    model; 'word' uses a per-word score of the focus (e.g. the drift wscore);
    'unweighted' gives every snippet weight 1.
    """

    mode: str = "context"
    alpha: float = 1.0
    word_scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("context", "word", "unweighted"):
            raise ValueError(f"unknown weighting mode {self.mode!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def sscore(
    tgt_model: EmbeddingModel,
    focus: int,
    context: Sequence[int],
    alpha: float = 1.0,
) -> float:
    """exp(alpha * cos(u_focus, mean context vector)) under the target model.

    Occurrences of the focus word are removed from the context first; a
    context emptied by the removal scores 0 (the snippet is skipped).
    Zero-norm vectors contribute cosine 0.
    """
    kept = [c for c in context if c != focus]
    if not kept:
        return 0.0
    u = tgt_model.focus[focus].astype(np.float64)
    v = tgt_model.context[np.asarray(kept)].mean(axis=0).astype(np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    cos = 0.0 if nu == 0 or nv == 0 else float(u @ v / (nu * nv))
    return float(np.exp(alpha * cos))


def _context_cosines(model: EmbeddingModel, samples: SampleArrays) -> np.ndarray:
    """cos(u_focus, mean v_C) for every sample, vectorized."""
    V = model.context.astype(np.float64)
    U = model.focus.astype(np.float64)
    sums = np.add.reduceat(V[samples.ctx_flat], samples.ctx_off[:-1], axis=0)
    lens = np.diff(samples.ctx_off)[:, None]
    means = sums / lens
    u = U[samples.focus]
    dots = np.einsum("ij,ij->i", u, means)
    norms = np.linalg.norm(u, axis=1) * np.linalg.norm(means, axis=1)
    cos = np.zeros(len(samples))
    np.divide(dots, norms, out=cos, where=norms > 0)
    return cos


def _source_samples(
    source_corpus: Corpus,
    doc_ids: Sequence[int],
    window: int,
    scoring_model: EmbeddingModel | None,
    weighting: SnippetWeighting,
) -> SampleArrays:
    docs = [source_corpus.docs[d] for d in doc_ids]
    samples = build_window_arrays(docs, window, drop_focus_repeats=True, origin=1)
    if weighting.mode == "context":
        cos = _context_cosines(scoring_model, samples)
        samples.weights[:] = np.exp(weighting.alpha * cos).astype(np.float32)
    elif weighting.mode == "word":
        words = source_corpus.vocabulary.words
        table = np.array(
            [weighting.word_scores.get(w, 0.0) for w in words], dtype=np.float32
        )
        samples.weights[:] = table[samples.focus]
    return samples


def joint_train(
    target_corpus: Corpus,
    source_corpus: Corpus,
    retained: Sequence[int],
    tgt_model_for_scoring: EmbeddingModel | None,
    weighting: SnippetWeighting,
    config: TrainConfig,
    random_inject: bool = False,
) -> EmbeddingModel:
    """Train a fresh model over target samples plus weighted source samples.

    ``source_corpus`` must be encoded with the target vocabulary (source-only
    words are dropped upstream, so no extra rows are ever allocated).  Target
    samples have weight 1 and draw negatives from the target unigram table;
    source samples are weighted per ``weighting`` and draw negatives from the
    retained documents' own unigram table.  ``random_inject`` adds a uniform
    5% sample of the non-retained source documents, weighted by their
    snippet score.
    """
    if source_corpus.vocabulary.hash() != target_corpus.vocabulary.hash():
        raise ValueError("source corpus must be encoded with the target vocabulary")
    retained = sorted(retained)
    if not retained:
        logger.warning("empty retained set: joint training degrades to target-only")
    inject_ids: list[int] = []
    if random_inject:
        pool = sorted(set(range(len(source_corpus))) - set(retained))
        n_inject = int(round(RANDOM_INJECT_FRACTION * len(pool)))
        if n_inject:
            rng = substream(config.seed, STREAM_INJECT)
            inject_ids = sorted(
                rng.choice(len(pool), size=n_inject, replace=False).tolist()
            )
            inject_ids = [pool[i] for i in inject_ids]
    source_ids = sorted(set(retained) | set(inject_ids))

    model = init_model(target_corpus.vocabulary, config.dim, config.seed)
    tgt_samples = build_window_arrays(target_corpus.docs, config.window, origin=0)
    parts = [tgt_samples]
    sampler0 = NegativeSampler(target_corpus.vocabulary.counts, config.distortion)
    sampler1 = None
    if source_ids:
        src_samples = _source_samples(
            source_corpus, source_ids, config.window, tgt_model_for_scoring, weighting
        )
        keep = src_samples.weights > 0
        if not np.all(keep):
            src_samples = _filter_samples(src_samples, keep)
        if len(src_samples):
            parts.append(src_samples)
            counts = np.zeros(len(source_corpus.vocabulary), dtype=np.int64)
            for d in source_ids:
                np.add.at(counts, source_corpus.docs[d], 1)
            sampler1 = NegativeSampler(counts, config.distortion)
    samples = SampleArrays.concat(parts) if len(parts) > 1 else parts[0]
    run_training(model, samples, config, sampler0, sampler1)
    return model


def _filter_samples(samples: SampleArrays, keep: np.ndarray) -> SampleArrays:
    idx = np.flatnonzero(keep)
    lens = np.diff(samples.ctx_off)
    ctx_parts = [
        samples.ctx_flat[samples.ctx_off[i] : samples.ctx_off[i + 1]] for i in idx
    ]
    ctx_flat = (
        np.concatenate(ctx_parts) if ctx_parts else np.empty(0, dtype=np.int32)
    )
    ctx_off = np.zeros(len(idx) + 1, dtype=np.int64)
    np.cumsum(lens[idx], out=ctx_off[1:])
    return SampleArrays(
        samples.focus[idx],
        ctx_flat,
        ctx_off,
        samples.weights[idx],
        samples.origin[idx],
    )


def src_plus_tgt_train(
    target_corpus: Corpus,
    source_corpus: Corpus,
    config: TrainConfig,
) -> EmbeddingModel:
    """Baseline: unweighted joint training over the full source and target.

    Both corpora must share one vocabulary; negatives are drawn per-corpus.
    """
    return joint_train(
        target_corpus,
        source_corpus,
        retained=range(len(source_corpus)),
        tgt_model_for_scoring=None,
        weighting=SnippetWeighting(mode="unweighted"),
        config=config,
    )
