"""Bit-level checks of the numba training kernel against a numpy replica."""

from __future__ import annotations

import numpy as np
import pytest

from adaptembed import kernels
from adaptembed.trainer import NegativeSampler, SampleArrays, build_window_arrays

U64 = np.uint64


def _mix64(x: np.uint64) -> np.uint64:
    with np.errstate(over="ignore"):
        x = U64(x)
        x = (x ^ (x >> U64(30))) * U64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> U64(27))) * U64(0x94D049BB133111EB)
        return x ^ (x >> U64(31))


GOLDEN = U64(0x9E3779B97F4A7C15)
U53 = 1.0 / 9007199254740992.0


class _ReplicaRng:
    """Counter-based splitmix64 stream, replicated from the kernel."""

    def __init__(self, seed: int, epoch: int, sample_id: int):
        with np.errstate(over="ignore"):
            self.state = _mix64(
                U64(seed)
                ^ (U64(epoch) * U64(0xA24BAED4963EE407))
                ^ (U64(sample_id) * U64(0x9FB21C651E98DF25))
            )

    def uniform(self) -> float:
        with np.errstate(over="ignore"):
            self.state = self.state + GOLDEN
            return float(_mix64(self.state) >> U64(11)) * U53


def _alias_draw(rng: _ReplicaRng, prob, alias, exclude):
    n = prob.shape[0]
    while True:
        u1 = rng.uniform()
        u2 = rng.uniform()
        j = min(int(u1 * n), n - 1)
        tgt = j if u2 < prob[j] else int(alias[j])
        if tgt != exclude:
            return tgt


def _sigmoid_lookup(f, table):
    if f >= kernels.MAX_EXP:
        return np.float32(1.0)
    if f <= -kernels.MAX_EXP:
        return np.float32(0.0)
    idx = int((f + kernels.MAX_EXP) * (kernels.EXP_TABLE_SIZE / (2.0 * kernels.MAX_EXP)))
    return table[idx]


def _replica_epoch(
    U,
    V,
    samples: SampleArrays,
    order,
    samplers,
    k,
    lr_start,
    lr_end,
    total_steps,
    step_base,
    seed,
    epoch,
    rho=0.0,
    reg_score=None,
    reg_rows=None,
):
    """Pure-numpy float32 replica of one kernel epoch (workers=1)."""
    table = kernels.sigmoid_table()
    denom = total_steps - 1 if total_steps > 1 else 1
    lr_scale = (lr_end - lr_start) / denom
    for ii, i in enumerate(order):
        step = step_base + ii
        lr = np.float32(lr_start + step * lr_scale)
        w = int(samples.focus[i])
        s, e = samples.ctx_off[i], samples.ctx_off[i + 1]
        ctx = samples.ctx_flat[s:e]
        neu = (V[ctx].sum(axis=0, dtype=np.float32) * np.float32(1.0 / len(ctx))).astype(
            np.float32
        )
        wt = samples.weights[i]
        reg_coef = np.float32(0.0)
        regd = None
        if reg_score is not None and rho > 0.0 and reg_score[w] > 0.0:
            rc = np.float32(rho * reg_score[w])
            reg_coef = min(np.float32(2.0) * rc * lr, np.float32(1.0))
            regd = (U[w] - reg_rows[w]).astype(np.float32)
        rng = _ReplicaRng(seed, epoch, i)
        prob, alias = samplers[int(samples.origin[i])]
        err = np.zeros(U.shape[1], dtype=np.float32)
        for t in range(k + 1):
            if t == 0:
                tgt, label = w, np.float32(1.0)
            else:
                tgt, label = _alias_draw(rng, prob, alias, w), np.float32(0.0)
            f = np.float32(np.dot(U[tgt], neu))
            sig = _sigmoid_lookup(f, table)
            g = np.float32(wt * (label - sig))
            err += g * U[tgt]
            U[tgt] += (g * lr) * neu
        if regd is not None:
            U[w] -= reg_coef * regd
        coef = np.float32(lr) * np.float32(1.0 / len(ctx))
        for j in ctx:
            V[j] += coef * err


def _workload(seed=0, n_docs=6, doc_len=30, vocab=20, dim=8):
    rng = np.random.default_rng(seed)
    docs = [rng.integers(0, vocab, doc_len).astype(np.int32) for _ in range(n_docs)]
    samples = build_window_arrays(docs, window=3)
    counts = rng.integers(1, 50, vocab)
    s0 = NegativeSampler(counts, 0.75)
    s1 = NegativeSampler(counts[::-1].copy(), 0.75)
    U = ((rng.random((vocab, dim)) - 0.5) / dim).astype(np.float32)
    V = (rng.random((vocab, dim)).astype(np.float32) - 0.5) * 0.01
    return docs, samples, s0, s1, U, V


@pytest.mark.parametrize("with_reg", [False, True])
def test_kernel_matches_numpy_replica(with_reg):
    _, samples, s0, s1, U, V = _workload(seed=3)
    n = len(samples)
    rng = np.random.default_rng(11)
    samples.weights[:] = rng.random(n).astype(np.float32) + 0.5
    samples.origin[:] = (rng.random(n) < 0.4).astype(np.uint8)
    rho, reg_score, reg_rows = 0.0, None, None
    if with_reg:
        rho = 2.0
        reg_score = (rng.random(U.shape[0]) < 0.5).astype(np.float32)
        reg_rows = rng.normal(scale=0.05, size=U.shape).astype(np.float32)
    U2, V2 = U.copy(), V.copy()
    order = rng.permutation(n).astype(np.int64)
    common = dict(
        k=4, lr_start=0.05, lr_end=0.05 / 10_000, total_steps=2 * n, seed=77
    )
    for epoch in range(2):
        kernels.train_epoch(
            U, V, samples.focus, samples.ctx_flat, samples.ctx_off, order,
            samples.weights, samples.origin, s0.prob, s0.alias, s1.prob, s1.alias,
            common["k"], common["lr_start"], common["lr_end"],
            common["total_steps"], epoch * n, common["seed"], epoch,
            rho=rho, reg_score=reg_score, reg_rows=reg_rows, workers=1,
        )
        _replica_epoch(
            U2, V2, samples, order, [(s0.prob, s0.alias), (s1.prob, s1.alias)],
            common["k"], common["lr_start"], common["lr_end"],
            common["total_steps"], epoch * n, common["seed"], epoch,
            rho=rho, reg_score=reg_score, reg_rows=reg_rows,
        )
    # fastmath reassociation allows tiny float32 drift, nothing more.
    np.testing.assert_allclose(U, U2, atol=5e-6)
    np.testing.assert_allclose(V, V2, atol=5e-6)


def test_negative_draws_keyed_by_sample_id_not_step_counter():
    """A sample's negative draws depend only on (seed, epoch, sample id).

    With a constant learning rate, processing one sample at different step
    offsets (as if it landed elsewhere in the shuffle) must produce
    bit-identical updates.
    """
    _, samples, s0, s1, U, V = _workload(seed=9)
    n = len(samples)
    for i in (0, 5, n - 1):
        outs = []
        for step_base in (0, 17):
            Ua, Va = U.copy(), V.copy()
            kernels.train_epoch(
                Ua, Va, samples.focus, samples.ctx_flat, samples.ctx_off,
                np.array([i], dtype=np.int64),
                samples.weights, samples.origin,
                s0.prob, s0.alias, s1.prob, s1.alias,
                5, 0.05, 0.05, 1, step_base, 123, 0, workers=1,
            )
            outs.append((Ua, Va))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        np.testing.assert_array_equal(outs[0][1], outs[1][1])
    # A different epoch tag must change some draw for at least one sample.
    Ua, Va = U.copy(), V.copy()
    Ub, Vb = U.copy(), V.copy()
    order = np.arange(n, dtype=np.int64)
    args = (samples.focus, samples.ctx_flat, samples.ctx_off, order,
            samples.weights, samples.origin, s0.prob, s0.alias,
            s1.prob, s1.alias, 5, 0.05, 0.05, 1, 0, 123)
    kernels.train_epoch(Ua, Va, *args, 0, workers=1)
    kernels.train_epoch(Ub, Vb, *args, 1, workers=1)
    assert not np.array_equal(Ua, Ub)


def test_kernel_loss_tracking_optional():
    _, samples, s0, s1, U, V = _workload(seed=1)
    n = len(samples)
    order = np.arange(n, dtype=np.int64)
    loss = kernels.train_epoch(
        U.copy(), V.copy(), samples.focus, samples.ctx_flat, samples.ctx_off,
        order, samples.weights, samples.origin, s0.prob, s0.alias,
        s1.prob, s1.alias, 5, 0.05, 0.05 / 10_000, n, 0, 5, 0,
        workers=1, track_loss=True,
    )
    assert loss > 0
    silent = kernels.train_epoch(
        U.copy(), V.copy(), samples.focus, samples.ctx_flat, samples.ctx_off,
        order, samples.weights, samples.origin, s0.prob, s0.alias,
        s1.prob, s1.alias, 5, 0.05, 0.05 / 10_000, n, 0, 5, 0,
        workers=1, track_loss=False,
    )
    assert silent == 0.0


def test_sigmoid_table_accuracy():
    table = kernels.sigmoid_table()
    xs = np.linspace(-7.9, 7.9, 1000)
    idx = ((xs + kernels.MAX_EXP) * (kernels.EXP_TABLE_SIZE / (2 * kernels.MAX_EXP))).astype(int)
    np.testing.assert_allclose(table[idx], 1.0 / (1.0 + np.exp(-xs)), atol=3e-3)
