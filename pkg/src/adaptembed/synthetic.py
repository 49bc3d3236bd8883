"""Synthetic cluster corpora for tests, benchmarks, and the bundled sample.

Documents are generated from disjoint word clusters: each document samples
its tokens from a single cluster, giving strong, known co-occurrence
structure.  Variants swap the cluster membership of chosen words (a
controlled sense drift) or scramble the vocabulary entirely.
"""

from __future__ import annotations

import numpy as np


def cluster_words(n_clusters: int, words_per_cluster: int) -> list[list[str]]:
    return [
        [f"c{c:02d}w{i:03d}" for i in range(words_per_cluster)]
        for c in range(n_clusters)
    ]


def make_cluster_docs(
    n_clusters: int = 12,
    words_per_cluster: int = 20,
    n_docs: int = 600,
    doc_len: int = 30,
    seed: int = 0,
    membership: dict[str, int] | None = None,
) -> list[list[str]]:
    """Token documents, each drawn from a single word cluster.

    ``membership`` overrides the natural word->cluster assignment, which is
    how drifted variants are produced: a word listed under a different
    cluster is emitted in that cluster's documents instead.
    """
    clusters = cluster_words(n_clusters, words_per_cluster)
    if membership:
        moved = set(membership)
        reassigned: list[list[str]] = [[] for _ in range(n_clusters)]
        for c, words in enumerate(clusters):
            for w in words:
                reassigned[membership.get(w, c)].append(w)
        clusters = reassigned
        if any(not c for c in clusters):
            raise ValueError("membership emptied a cluster")
        assert moved <= {w for ws in clusters for w in ws}
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_docs):
        c = int(rng.integers(n_clusters))
        words = clusters[c]
        idx = rng.integers(len(words), size=doc_len)
        docs.append([words[i] for i in idx])
    return docs


def drifted_membership(
    n_clusters: int,
    words_per_cluster: int,
    drift_fraction: float,
    seed: int,
) -> tuple[dict[str, int], list[str]]:
    """Reassign a fraction of words to a different (random) cluster.

    Returns the membership override and the list of drifted words.
    """
    clusters = cluster_words(n_clusters, words_per_cluster)
    all_words = [w for ws in clusters for w in ws]
    rng = np.random.default_rng(seed)
    n_drift = int(round(drift_fraction * len(all_words)))
    drifted = sorted(
        rng.choice(len(all_words), size=n_drift, replace=False).tolist()
    )
    membership = {}
    moved = []
    for i in drifted:
        word = all_words[i]
        home = i // words_per_cluster
        target = int(rng.integers(n_clusters - 1))
        if target >= home:
            target += 1
        membership[word] = target
        moved.append(word)
    return membership, moved


def scrambled_docs(docs: list[list[str]], seed: int) -> list[list[str]]:
    """Apply a random word-level permutation to every document's tokens."""
    vocab = sorted({w for doc in docs for w in doc})
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(vocab))
    mapping = {vocab[i]: vocab[perm[i]] for i in range(len(vocab))}
    return [[mapping[w] for w in doc] for doc in docs]


def write_sample_corpus(path, target_bytes: int = 1_000_000, seed: int = 7) -> None:
    """Write the bundled plain-text sample corpus (~1 MB, one doc per line).

    50 clusters of 20 words each: small clusters keep the chance that a
    random word pair shares a cluster low, which the calibration control
    relies on.
    """
    rng = np.random.default_rng(seed)
    lines = []
    size = 0
    clusters = cluster_words(50, 20)
    while size < target_bytes:
        c = int(rng.integers(len(clusters)))
        words = clusters[c]
        n = int(rng.integers(12, 40))
        idx = rng.integers(len(words), size=n)
        line = " ".join(words[i] for i in idx)
        lines.append(line)
        size += len(line) + 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
