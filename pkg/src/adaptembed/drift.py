"""KNN-based stability scoring between source and target embeddings.

For each word shared by the two vocabularies, its nearest neighbors under
the source embeddings are looked up and the mean target-side cosine between
the word and those neighbors gives a stability value; a clipped tanh of it
is the per-word import weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adaptembed.trainer import EmbeddingModel

DEFAULT_K = 10
DEFAULT_LAMBDA = 10.0
DEFAULT_TOP_M = 20
LAMBDA_GRID = (0.1, 1.0, 10.0, 50.0)


@dataclass
class WordStability:
    word: str
    neighbors: tuple[int, ...]  # source-side neighbor ids into the shared list
    stability: float
    wscore: float
    clipped: bool
    degenerate: bool = False  # a zero-norm vector was involved


@dataclass
class StabilityReport:
    """Per-shared-word stability and wscore, plus the shared word list."""

    shared_words: tuple[str, ...]
    entries: dict[str, WordStability]
    k: int
    lam: float
    top_m: int

    def wscores(self) -> dict[str, float]:
        return {w: e.wscore for w, e in self.entries.items()}

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("word\tstability\twscore\tclipped\n")
            for word in self.shared_words:
                e = self.entries[word]
                fh.write(
                    f"{word}\t{e.stability:.6f}\t{e.wscore:.6f}\t"
                    f"{int(e.clipped)}\n"
                )

    @staticmethod
    def load_wscores(path: str | Path) -> dict[str, float]:
        scores: dict[str, float] = {}
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                word, _stab, ws, _clip = line.rstrip("\n").split("\t")
                scores[word] = float(ws)
        return scores


def _normalized(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe[:, None], norms


def knn(
    embeddings: np.ndarray,
    query: int,
    k: int,
    candidates: np.ndarray | None = None,
) -> list[int]:
    """Indices of the K nearest candidates to ``query`` by cosine.

    Self is excluded; descending cosine with ties broken by ascending index.
    Returns all candidates when fewer than K remain.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if candidates is None:
        candidates = np.arange(embeddings.shape[0])
    candidates = np.asarray(candidates)
    qvec = embeddings[query]
    qnorm = np.linalg.norm(qvec)
    if qnorm == 0:
        raise ValueError("zero-norm query vector: cosine undefined")
    rows = embeddings[candidates]
    norms = np.linalg.norm(rows, axis=1)
    cos = (rows @ qvec) / (np.where(norms > 0, norms, 1.0) * qnorm)
    cos[norms == 0] = 0.0
    mask = candidates != query
    cand = candidates[mask]
    cos = cos[mask]
    order = np.lexsort((cand, -cos))
    return [int(c) for c in cand[order[:k]]]


def stability(
    word: str,
    src_model: EmbeddingModel,
    tgt_model: EmbeddingModel,
    k: int = DEFAULT_K,
    shared: list[str] | None = None,
) -> float:
    """Mean target-side cosine between ``word`` and its source-side neighbors."""
    if shared is None:
        shared = [w for w in src_model.words if w in tgt_model.id_of]
    report = build_report(src_model, tgt_model, k=k, lam=1.0, top_m=0, words=[word],
                          shared=shared)
    return report.entries[word].stability


def wscore(
    stability_value: float,
    lam: float,
    target_freq_rank: int,
    top_m: int = DEFAULT_TOP_M,
) -> float:
    """max(0, tanh(lam * stability)), clipped to 0 for top-m frequent words."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if top_m < 0:
        raise ValueError("top_m must be nonnegative")
    if target_freq_rank < top_m:
        return 0.0
    return max(0.0, float(np.tanh(lam * stability_value)))


def build_report(
    src_model: EmbeddingModel,
    tgt_model: EmbeddingModel,
    k: int = DEFAULT_K,
    lam: float = DEFAULT_LAMBDA,
    top_m: int = DEFAULT_TOP_M,
    tgt_counts: np.ndarray | None = None,
    words: list[str] | None = None,
    shared: list[str] | None = None,
) -> StabilityReport:
    """Stability and wscore for every word shared by the two models.

    ``tgt_counts`` (aligned to tgt_model.words) drives the top-m frequency
    clipping; without it no word is clipped.  Zero-norm target vectors are
    scored as cosine 0 and flagged.
    """
    if shared is None:
        shared = [w for w in src_model.words if w in tgt_model.id_of]
    if not shared:
        raise ValueError("source and target vocabularies do not intersect")
    shared = list(shared)
    src_ids = np.array([src_model.id_of[w] for w in shared])
    tgt_ids = np.array([tgt_model.id_of[w] for w in shared])
    src_rows, src_norms = _normalized(
        src_model.representation()[src_ids].astype(np.float64)
    )
    tgt_rows, tgt_norms = _normalized(
        tgt_model.representation()[tgt_ids].astype(np.float64)
    )

    clipped_words: set[str] = set()
    if tgt_counts is not None and top_m > 0:
        order = np.lexsort((np.arange(len(tgt_counts)), -np.asarray(tgt_counts)))
        top_ids = set(order[:top_m].tolist())
        clipped_words = {
            w for w, tid in zip(shared, tgt_ids) if int(tid) in top_ids
        }

    wanted = shared if words is None else words
    sims = src_rows @ src_rows.T  # shared vocabularies are small enough
    n_shared = len(shared)
    idx_of = {w: i for i, w in enumerate(shared)}
    entries: dict[str, WordStability] = {}
    for word in wanted:
        i = idx_of[word]
        if src_norms[i] == 0:
            raise ValueError(f"zero-norm source vector for {word!r}")
        cos = sims[i].copy()
        cos[i] = -np.inf
        order = np.lexsort((np.arange(n_shared), -cos))
        neigh = order[: min(k, n_shared - 1)]
        degenerate = bool(tgt_norms[i] == 0 or np.any(tgt_norms[neigh] == 0))
        if len(neigh) == 0:
            stab = 0.0
        else:
            tcos = tgt_rows[neigh] @ tgt_rows[i]
            stab = float(np.mean(tcos))
        clipped = word in clipped_words
        score = 0.0 if clipped else max(0.0, float(np.tanh(lam * stab)))
        entries[word] = WordStability(
            word, tuple(int(j) for j in neigh), stab, score, clipped, degenerate
        )
    return StabilityReport(tuple(wanted), entries, k, lam, top_m)
