"""KNN, stability, wscore, and the composite drift report."""

from __future__ import annotations

import math

import numpy as np
import pytest

from adaptembed.drift import (
    StabilityReport,
    build_report,
    knn,
    stability,
    wscore,
)
from adaptembed.synthetic import (
    cluster_words,
    drifted_membership,
    make_cluster_docs,
    scrambled_docs,
)
from adaptembed.trainer import EmbeddingModel, Tgt, TrainConfig, train
from conftest import make_corpus, make_model


def _flat_model(words, rows) -> EmbeddingModel:
    """Model whose representation is exactly ``rows`` (no context half)."""
    return EmbeddingModel(tuple(words), np.asarray(rows, dtype=np.float64), None)


# ---------------------------------------------------------------------------
# knn


def test_knn_identical_vector_ranked_first():
    rows = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
    assert knn(rows, 0, k=3)[0] == 1


def test_knn_excludes_query():
    rows = np.random.default_rng(0).normal(size=(8, 4))
    for q in range(8):
        assert q not in knn(rows, q, k=7)


def test_knn_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    rows = rng.normal(size=(50, 10))
    for q in (0, 13, 49):
        got = knn(rows, q, k=10)
        # Exhaustive cosine sort oracle.
        cos = {}
        for i in range(50):
            if i == q:
                continue
            cos[i] = float(
                rows[i] @ rows[q] / (np.linalg.norm(rows[i]) * np.linalg.norm(rows[q]))
            )
        expected = sorted(cos, key=lambda i: (-cos[i], i))[:10]
        assert got == expected


def test_knn_candidate_order_invariant():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(20, 6))
    cands = np.arange(20)
    shuffled = rng.permutation(cands)
    assert knn(rows, 4, k=5, candidates=cands) == knn(rows, 4, k=5, candidates=shuffled)


def test_knn_returns_all_when_few_candidates():
    rows = np.random.default_rng(1).normal(size=(4, 3))
    assert len(knn(rows, 0, k=10)) == 3


def test_knn_rejects_zero_norm_query():
    rows = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        knn(rows, 0, k=1)
    with pytest.raises(ValueError):
        knn(rows, 1, k=0)


# ---------------------------------------------------------------------------
# stability


def test_stability_identical_unit_models_is_one():
    words = [f"w{i}" for i in range(5)]
    rows = np.tile(np.array([0.6, 0.8]), (5, 1))
    m = _flat_model(words, rows)
    assert stability("w0", m, m, k=3) == pytest.approx(1.0)


def test_stability_orthogonal_neighbors_is_zero():
    words = ["w0", "w1", "w2"]
    src = _flat_model(words, [[1, 0], [0.9, 0.1], [0.8, 0.2]])
    tgt = _flat_model(words, [[1, 0], [0, 1], [0, 1]])
    assert stability("w0", src, tgt, k=2) == pytest.approx(0.0)


def test_stability_six_word_hand_computed():
    words = [f"w{i}" for i in range(6)]
    src = _flat_model(
        words,
        [[1, 0], [0.9, 0.1], [0.8, 0.2], [0, 1], [0.1, 0.9], [-0.1, 1]],
    )
    # Source neighbors of w0 at K=2 are w1 and w2 (largest cosines).
    # Target: cos(w0,w1)=0, cos(w0,w2)=1 -> stability = (0+1)/2 = 0.5.
    tgt = _flat_model(words, [[1, 0], [0, 1], [1, 0], [0, 1], [1, 1], [1, -1]])
    assert stability("w0", src, tgt, k=2) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# wscore


def test_wscore_zero_stability():
    for lam in (0.1, 1.0, 50.0):
        assert wscore(0.0, lam, target_freq_rank=100) == 0.0


def test_wscore_clips_top_m_frequent_words():
    assert wscore(0.9, lam=10.0, target_freq_rank=5, top_m=20) == 0.0


def test_wscore_closed_form():
    assert wscore(0.5, lam=10.0, target_freq_rank=100) == pytest.approx(
        math.tanh(5.0), abs=1e-9
    )
    assert math.tanh(5.0) == pytest.approx(0.999909, abs=5e-7)


def test_wscore_negative_stability_clamped():
    assert wscore(-0.4, lam=10.0, target_freq_rank=100) == 0.0


def test_wscore_monotone():
    stabs = np.linspace(-1, 1, 21)
    vals = [wscore(s, 2.0, 100) for s in stabs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    lams = (0.1, 1.0, 10.0, 50.0)
    vals = [wscore(0.3, lam, 100) for lam in lams]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_wscore_validates_args():
    with pytest.raises(ValueError):
        wscore(0.5, lam=0.0, target_freq_rank=100)
    with pytest.raises(ValueError):
        wscore(0.5, lam=1.0, target_freq_rank=0, top_m=-1)


# ---------------------------------------------------------------------------
# build_report


def _train_pair(src_docs, tgt_docs, dim=32, epochs=5, seed=0):
    cfg = TrainConfig(dim=dim, window=5, negatives=5, epochs=epochs, seed=seed)
    src = train(make_corpus(src_docs), cfg, Tgt())
    tgt = train(make_corpus(tgt_docs), cfg, Tgt())
    return src, tgt


def test_report_identical_models_positive_scores():
    docs = make_cluster_docs(n_clusters=4, words_per_cluster=6, n_docs=200, seed=1)
    cfg = TrainConfig(dim=16, epochs=5, seed=0)
    model = train(make_corpus(docs), cfg, Tgt())
    report = build_report(model, model, k=5, lam=10.0, top_m=0)
    # Identical models: every word's target cosine to its own source-side
    # neighbors is the same (high) cosine used to pick them.
    assert all(e.wscore > 0 for e in report.entries.values())
    assert all(e.stability > 0 for e in report.entries.values())


def test_report_jumbled_source_matches_random_pair_baseline():
    docs = make_cluster_docs(
        n_clusters=12, words_per_cluster=20, n_docs=600, doc_len=30, seed=2
    )
    src, tgt = _train_pair(scrambled_docs(docs, seed=5), docs)
    report = build_report(src, tgt, k=10, lam=1.0, top_m=0)
    mean_stab = float(np.mean([e.stability for e in report.entries.values()]))
    # Monte-Carlo baseline: mean cosine of random target word pairs.
    rep = tgt.representation().astype(np.float64)
    rep /= np.linalg.norm(rep, axis=1, keepdims=True)
    rng = np.random.default_rng(0)
    ii = rng.integers(0, len(rep), 4000)
    jj = rng.integers(0, len(rep), 4000)
    keep = ii != jj
    baseline = float(np.mean(np.einsum("ij,ij->i", rep[ii[keep]], rep[jj[keep]])))
    assert abs(mean_stab - baseline) < 0.08
    assert mean_stab < 0.3  # far below the identical-corpus regime


def test_report_drifted_words_rank_in_bottom_quartile():
    n_clusters, words_per = 12, 20
    membership, moved = drifted_membership(n_clusters, words_per, 0.10, seed=4)
    tgt_docs = make_cluster_docs(
        n_clusters, words_per, n_docs=1200, doc_len=30, seed=6
    )
    src_docs = make_cluster_docs(
        n_clusters, words_per, n_docs=1200, doc_len=30, seed=7, membership=membership
    )
    src, tgt = _train_pair(src_docs, tgt_docs)
    report = build_report(src, tgt, k=10, lam=10.0, top_m=0)
    ranked = sorted(report.shared_words, key=lambda w: report.entries[w].wscore)
    quartile = set(ranked[: math.ceil(len(ranked) / 4)])
    present = [w for w in moved if w in report.entries]
    assert len(present) >= 20
    in_quartile = sum(w in quartile for w in present)
    assert in_quartile / len(present) >= 0.9


def test_report_scaling_invariance():
    words = [f"w{i}" for i in range(12)]
    src = make_model(words, dim=6, seed=1)
    tgt = make_model(words, dim=6, seed=2)
    base = build_report(src, tgt, k=4, lam=1.0, top_m=0)
    scaled_src = EmbeddingModel(src.words, src.focus * 7.0, src.context * 7.0)
    scaled_tgt = EmbeddingModel(tgt.words, tgt.focus * 0.1, tgt.context * 0.1)
    scaled = build_report(scaled_src, scaled_tgt, k=4, lam=1.0, top_m=0)
    for w in words:
        assert scaled.entries[w].stability == pytest.approx(
            base.entries[w].stability, rel=1e-9
        )
        assert scaled.entries[w].wscore == pytest.approx(
            base.entries[w].wscore, rel=1e-9
        )


def test_report_top_m_clipping_uses_target_counts():
    words = [f"w{i}" for i in range(6)]
    src = make_model(words, dim=4, seed=3)
    tgt = make_model(words, dim=4, seed=4)
    counts = np.array([100, 90, 1, 1, 1, 1])
    report = build_report(src, tgt, k=2, lam=10.0, top_m=2, tgt_counts=counts)
    assert report.entries["w0"].clipped and report.entries["w0"].wscore == 0.0
    assert report.entries["w1"].clipped
    assert not report.entries["w2"].clipped


def test_report_requires_shared_vocabulary():
    a = make_model(["a", "b"], dim=3)
    b = make_model(["x", "y"], dim=3)
    with pytest.raises(ValueError):
        build_report(a, b)


def test_report_tsv_round_trip(tmp_path):
    words = [f"w{i}" for i in range(8)]
    src = make_model(words, dim=5, seed=5)
    tgt = make_model(words, dim=5, seed=6)
    report = build_report(src, tgt, k=3, lam=1.0, top_m=0)
    p = tmp_path / "drift.tsv"
    report.save_tsv(p)
    loaded = StabilityReport.load_wscores(p)
    for w in words:
        assert loaded[w] == pytest.approx(report.entries[w].wscore, abs=1e-6)
