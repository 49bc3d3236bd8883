"""Numba kernels for the hot CBOW/negative-sampling training loop.

The kernel operates on flattened window-sample arrays and updates the focus
and context matrices in place.  Negative draws are keyed by (seed, epoch,
sample id) through a counter-based splitmix64 generator, so the draws for a
given sample do not depend on worker count or visit order.  With workers > 1
the updates are racy (hogwild); workers = 1 is bit-exact reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange, set_num_threads

EXP_TABLE_SIZE = 4096
MAX_EXP = 8.0

_exp_table = None


def sigmoid_table() -> np.ndarray:
    global _exp_table
    if _exp_table is None:
        x = (np.arange(EXP_TABLE_SIZE) / EXP_TABLE_SIZE * 2.0 - 1.0) * MAX_EXP
        _exp_table = (1.0 / (1.0 + np.exp(-x))).astype(np.float32)
    return _exp_table


@njit(inline="always")
def _mix64(x):
    x = np.uint64(x)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U53 = 1.0 / 9007199254740992.0


@njit(cache=True, fastmath=True)
def _run_range(
    U,
    V,
    foc,
    ctx_flat,
    ctx_off,
    order,
    weights,
    origin,
    prob0,
    alias0,
    prob1,
    alias1,
    k,
    lr_start,
    lr_end,
    total_steps,
    step_base,
    seed,
    epoch,
    rho,
    reg_score,
    reg_rows,
    has_reg,
    table,
    track_loss,
    lo,
    hi,
):
    dim = U.shape[1]
    neu = np.empty(dim, dtype=np.float32)
    err = np.empty(dim, dtype=np.float32)
    regd = np.empty(dim, dtype=np.float32)
    loss = 0.0
    denom = total_steps - 1 if total_steps > 1 else 1
    lr_scale = (lr_end - lr_start) / denom
    for ii in range(lo, hi):
        i = order[ii]
        step = step_base + ii
        lr = np.float32(lr_start + step * lr_scale)
        w = foc[i]
        s = ctx_off[i]
        e = ctx_off[i + 1]
        m = e - s
        inv_m = np.float32(1.0 / m)
        for d in range(dim):
            neu[d] = 0.0
        for j in range(s, e):
            row = V[ctx_flat[j]]
            for d in range(dim):
                neu[d] += row[d]
        for d in range(dim):
            neu[d] *= inv_m
            err[d] = 0.0
        wt = weights[i]
        do_reg = has_reg and rho > 0.0 and reg_score[w] > 0.0
        reg_coef = np.float32(0.0)
        if do_reg:
            rc = np.float32(rho * reg_score[w])
            # Clamp so one step never overshoots the source vector (the
            # penalty's own minimizer); below the clamp this is plain SGD.
            reg_coef = min(np.float32(2.0) * rc * lr, np.float32(1.0))
            for d in range(dim):
                diff = U[w, d] - reg_rows[w, d]
                regd[d] = diff
                loss += rc * diff * diff
        state = _mix64(
            np.uint64(seed)
            ^ (np.uint64(epoch) * np.uint64(0xA24BAED4963EE407))
            ^ (np.uint64(i) * np.uint64(0x9FB21C651E98DF25))
        )
        if origin[i] == 0:
            prob, alias = prob0, alias0
        else:
            prob, alias = prob1, alias1
        nneg = prob.shape[0]
        for t in range(k + 1):
            if t == 0:
                tgt = w
                label = np.float32(1.0)
            else:
                tgt = w
                while tgt == w:
                    state = state + _GOLDEN
                    r1 = _mix64(state)
                    state = state + _GOLDEN
                    r2 = _mix64(state)
                    u1 = (r1 >> np.uint64(11)) * _U53
                    u2 = (r2 >> np.uint64(11)) * _U53
                    j2 = int(u1 * nneg)
                    if j2 >= nneg:
                        j2 = nneg - 1
                    tgt = j2 if u2 < prob[j2] else alias[j2]
                label = np.float32(0.0)
            urow = U[tgt]
            f = np.float32(0.0)
            for d in range(dim):
                f += urow[d] * neu[d]
            if f >= MAX_EXP:
                sig = np.float32(1.0)
            elif f <= -MAX_EXP:
                sig = np.float32(0.0)
            else:
                sig = table[int((f + MAX_EXP) * (EXP_TABLE_SIZE / (2.0 * MAX_EXP)))]
            if track_loss:
                p = sig if label > 0.0 else np.float32(1.0) - sig
                if p < 1e-7:
                    p = np.float32(1e-7)
                loss -= wt * np.log(p)
            g = wt * (label - sig)
            glr = g * lr
            for d in range(dim):
                err[d] += g * urow[d]
            for d in range(dim):
                urow[d] += glr * neu[d]
        if do_reg:
            for d in range(dim):
                U[w, d] -= reg_coef * regd[d]
        coef = lr * inv_m
        for j in range(s, e):
            row = V[ctx_flat[j]]
            for d in range(dim):
                row[d] += coef * err[d]
    return loss


@njit(cache=True, fastmath=True, parallel=True)
def _run_parallel(
    U,
    V,
    foc,
    ctx_flat,
    ctx_off,
    order,
    weights,
    origin,
    prob0,
    alias0,
    prob1,
    alias1,
    k,
    lr_start,
    lr_end,
    total_steps,
    step_base,
    seed,
    epoch,
    rho,
    reg_score,
    reg_rows,
    has_reg,
    table,
    track_loss,
    nchunks,
):
    n = order.shape[0]
    losses = np.zeros(nchunks, dtype=np.float64)
    for c in prange(nchunks):
        lo = c * n // nchunks
        hi = (c + 1) * n // nchunks
        losses[c] = _run_range(
            U, V, foc, ctx_flat, ctx_off, order, weights, origin,
            prob0, alias0, prob1, alias1, k, lr_start, lr_end,
            total_steps, step_base, seed, epoch, rho, reg_score,
            reg_rows, has_reg, table, track_loss, lo, hi,
        )
    return losses.sum()


def train_epoch(
    U: np.ndarray,
    V: np.ndarray,
    foc: np.ndarray,
    ctx_flat: np.ndarray,
    ctx_off: np.ndarray,
    order: np.ndarray,
    weights: np.ndarray,
    origin: np.ndarray,
    prob0: np.ndarray,
    alias0: np.ndarray,
    prob1: np.ndarray,
    alias1: np.ndarray,
    k: int,
    lr_start: float,
    lr_end: float,
    total_steps: int,
    step_base: int,
    seed: int,
    epoch: int,
    rho: float = 0.0,
    reg_score: np.ndarray | None = None,
    reg_rows: np.ndarray | None = None,
    workers: int = 1,
    track_loss: bool = True,
) -> float:
    """Run one epoch over ``order`` and return the accumulated loss."""
    has_reg = reg_score is not None
    if reg_score is None:
        reg_score = np.zeros(1, dtype=np.float32)
        reg_rows = np.zeros((1, U.shape[1]), dtype=np.float32)
    table = sigmoid_table()
    args = (
        U, V, foc, ctx_flat, ctx_off, order, weights, origin,
        prob0, alias0, prob1, alias1, k,
        np.float64(lr_start), np.float64(lr_end),
        np.int64(total_steps), np.int64(step_base),
        np.uint64(seed), np.int64(epoch),
        np.float64(rho), reg_score, reg_rows, has_reg, table, track_loss,
    )
    if workers <= 1:
        return _run_range(*args, 0, order.shape[0])
    set_num_threads(workers)
    return _run_parallel(*args, workers)
