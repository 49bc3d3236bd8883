"""Shared fixtures and corpus-building helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from adaptembed.corpus import Corpus, Vocabulary, build_vocabulary, encode
from adaptembed.trainer import EmbeddingModel


def make_corpus(docs: list[list[str]], min_count: int = 1) -> Corpus:
    """Encode token documents with a vocabulary built from them."""
    vocab = build_vocabulary((t for d in docs for t in d), min_count=min_count)
    return encode(docs, vocab)


def make_model(
    words: list[str],
    dim: int = 8,
    seed: int = 0,
    dtype=np.float64,
    zero_context: bool = False,
) -> EmbeddingModel:
    """Random small model (float64 by default, for gradient tests)."""
    rng = np.random.default_rng(seed)
    focus = rng.normal(size=(len(words), dim)).astype(dtype)
    if zero_context:
        context = np.zeros((len(words), dim), dtype=dtype)
    else:
        context = rng.normal(size=(len(words), dim)).astype(dtype)
    return EmbeddingModel(tuple(words), focus, context)


def vocab_of(entries: list[tuple[str, int]]) -> Vocabulary:
    return Vocabulary.from_entries(entries)


@pytest.fixture
def cluster_docs():
    """Two disjoint 4-word clusters, 200 docs, for separation checks."""
    from adaptembed.synthetic import make_cluster_docs

    return make_cluster_docs(
        n_clusters=2, words_per_cluster=4, n_docs=200, doc_len=20, seed=3
    )
