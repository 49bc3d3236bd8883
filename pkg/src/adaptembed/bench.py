"""Throughput benchmark for the training kernel.

Measures window samples per second per core on a synthetic workload
(vocabulary 5000, dim 100, window 5, 5 negatives) and compares the
best-of-N timing against the pinned target.  Run as::

    python -m adaptembed.bench
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from adaptembed import kernels

#: Pinned from the baseline measurement on the reference container
#: (best-of-7 ~1.05M samples/s); the acceptance bar is 1M.
TARGET_SAMPLES_PER_SEC = 1_000_000.0

VOCAB_SIZE = 5000
DIM = 100
WINDOW = 5
NEGATIVES = 5


def build_workload(
    n_docs: int = 200, doc_len: int = 1000, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened window samples over random documents."""
    rng = np.random.default_rng(seed)
    foc: list[int] = []
    cf: list[int] = []
    co: list[int] = [0]
    for _ in range(n_docs):
        doc = rng.integers(0, VOCAB_SIZE, doc_len).tolist()
        n = len(doc)
        for t in range(n):
            lo, hi = max(0, t - WINDOW), min(n, t + WINDOW + 1)
            foc.append(doc[t])
            cf.extend(doc[j] for j in range(lo, hi) if j != t)
            co.append(len(cf))
    return (
        np.array(foc, dtype=np.int32),
        np.array(cf, dtype=np.int32),
        np.array(co, dtype=np.int64),
    )


def measure_throughput(repeats: int = 7, seed: int = 0) -> float:
    """Best-of-N samples/second for one epoch of the kernel, single core."""
    foc, cf, co = build_workload(seed=seed)
    n = len(foc)
    rng = np.random.default_rng(seed + 1)
    counts = rng.integers(1, 1000, VOCAB_SIZE)
    from adaptembed.trainer import NegativeSampler

    sampler = NegativeSampler(counts, 0.75)
    U = ((rng.random((VOCAB_SIZE, DIM)) - 0.5) / DIM).astype(np.float32)
    V = np.zeros((VOCAB_SIZE, DIM), dtype=np.float32)
    weights = np.ones(n, dtype=np.float32)
    origin = np.zeros(n, dtype=np.uint8)
    order = rng.permutation(n).astype(np.int64)

    def run_epoch(rows: np.ndarray) -> None:
        kernels.train_epoch(
            U, V, foc, cf, co, rows, weights, origin,
            sampler.prob, sampler.alias, sampler.prob, sampler.alias,
            NEGATIVES, 0.05, 0.05 / 10_000, n, 0, seed, 0,
            workers=1, track_loss=False,
        )

    run_epoch(order[:100])  # compile
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        run_epoch(order)
        best = min(best, time.perf_counter() - start)
    return n / best


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--target", type=float, default=TARGET_SAMPLES_PER_SEC,
        help="samples/second/core the run must meet",
    )
    args = parser.parse_args(argv)
    rate = measure_throughput(repeats=args.repeats, seed=args.seed)
    status = "PASS" if rate >= args.target else "FAIL"
    print(
        f"{status}: {rate / 1e6:.3f}M window samples/s/core "
        f"(target {args.target / 1e6:.2f}M; dim={DIM}, k={NEGATIVES}, "
        f"window={WINDOW}, vocab={VOCAB_SIZE})"
    )
    return 0 if rate >= args.target else 1


if __name__ == "__main__":
    raise SystemExit(main())
