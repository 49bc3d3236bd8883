"""Hyperparameter calibration by vocabulary jumbling.

A held-out slice of the target corpus is offered as a fake source twice:
once verbatim (everything should look importable) and once with its
vocabulary randomly permuted (nothing should).  The (lambda, alpha) grid
point that best separates the two scenarios wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from adaptembed.corpus import Corpus, permute_vocabulary
from adaptembed.drift import build_report
from adaptembed.select import _context_cosines
from adaptembed.trainer import (
    Tgt,
    TrainConfig,
    build_window_arrays,
    substream,
    train,
    STREAM_PERMUTE,
    STREAM_SPLIT,
)

DEFAULT_HELDOUT_FRACTION = 0.2
MIN_HELDOUT_DOCS = 100


@dataclass
class GridPoint:
    lam: float
    alpha: float
    wscore_heldout: float
    wscore_jumbled: float
    sscore_heldout: float
    sscore_jumbled: float

    @property
    def margin(self) -> float:
        return (self.wscore_heldout - self.wscore_jumbled) + (
            self.sscore_heldout - self.sscore_jumbled
        )


@dataclass
class CalibrationResult:
    lam: float
    alpha: float
    diagnostics: list[GridPoint]

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "lambda\talpha\twscore_heldout\twscore_jumbled\t"
                "sscore_heldout\tsscore_jumbled\tmargin\tselected\n"
            )
            for g in self.diagnostics:
                sel = int(g.lam == self.lam and g.alpha == self.alpha)
                fh.write(
                    f"{g.lam:g}\t{g.alpha:g}\t{g.wscore_heldout:.6f}\t"
                    f"{g.wscore_jumbled:.6f}\t{g.sscore_heldout:.6f}\t"
                    f"{g.sscore_jumbled:.6f}\t{g.margin:.6f}\t{sel}\n"
                )


def split_corpus(
    corpus: Corpus, heldout_fraction: float, seed: int
) -> tuple[Corpus, Corpus]:
    """Deterministic shuffled split into (main, heldout)."""
    rng = substream(seed, STREAM_SPLIT)
    order = rng.permutation(len(corpus))
    n_held = int(round(heldout_fraction * len(corpus)))
    held = sorted(order[:n_held].tolist())
    main = sorted(order[n_held:].tolist())
    vocab = corpus.vocabulary
    return (
        Corpus(vocab, tuple(corpus.docs[i] for i in main)),
        Corpus(vocab, tuple(corpus.docs[i] for i in held)),
    )


def calibrate(
    target_corpus: Corpus,
    lam_grid: Sequence[float],
    alpha_grid: Sequence[float],
    heldout_fraction: float = DEFAULT_HELDOUT_FRACTION,
    seed: int = 0,
    config: TrainConfig | None = None,
    top_m: int = 20,
    k: int = 10,
    min_heldout_docs: int = MIN_HELDOUT_DOCS,
) -> CalibrationResult:
    """Grid-search lambda and alpha to separate held-out from jumbled source.

    Mean wscore over shared words and mean normalized snippet score (score
    divided by e^alpha) over the fake source's windows are computed under
    both scenarios; the grid point maximizing the summed margin wins, ties
    broken by smaller lambda then smaller alpha.
    """
    if not lam_grid or not alpha_grid:
        raise ValueError("grids must be non-empty")
    main, held = split_corpus(target_corpus, heldout_fraction, seed)
    if len(held) < min_heldout_docs:
        raise ValueError(
            f"held-out slice has {len(held)} documents, need >= {min_heldout_docs}"
        )
    cfg = config or TrainConfig()
    perm_seed = int(substream(seed, STREAM_PERMUTE).integers(0, 2**31))
    jumbled = permute_vocabulary(held, perm_seed)

    tgt_model = train(main, cfg, Tgt())
    held_model = train(held, cfg, Tgt())
    jumb_model = train(jumbled, cfg, Tgt())

    counts = target_corpus.vocabulary.counts
    # Stabilities are lambda-independent; compute once per scenario.
    rep_a = build_report(held_model, tgt_model, k=k, lam=1.0, top_m=top_m,
                         tgt_counts=counts)
    rep_b = build_report(jumb_model, tgt_model, k=k, lam=1.0, top_m=top_m,
                         tgt_counts=counts)

    def mean_wscore(report, lam: float) -> float:
        vals = [
            0.0 if e.clipped else max(0.0, float(np.tanh(lam * e.stability)))
            for e in report.entries.values()
        ]
        return float(np.mean(vals))

    # Snippet cosines are alpha-independent; normalized score is
    # exp(alpha*(cos-1)) so different alphas are comparable.
    cos_a = _snippet_cosines(held, tgt_model, cfg)
    cos_b = _snippet_cosines(jumbled, tgt_model, cfg)

    diagnostics = []
    for lam in lam_grid:
        wa, wb = mean_wscore(rep_a, lam), mean_wscore(rep_b, lam)
        for alpha in alpha_grid:
            sa = float(np.mean(np.exp(alpha * (cos_a - 1.0))))
            sb = float(np.mean(np.exp(alpha * (cos_b - 1.0))))
            diagnostics.append(GridPoint(lam, alpha, wa, wb, sa, sb))
    best = max(
        diagnostics,
        key=lambda g: (g.margin, -g.lam, -g.alpha),
    )
    return CalibrationResult(best.lam, best.alpha, diagnostics)


def _snippet_cosines(corpus: Corpus, scoring_model, cfg: TrainConfig) -> np.ndarray:
    samples = build_window_arrays(corpus.docs, cfg.window, drop_focus_repeats=True)
    if len(samples) == 0:
        return np.zeros(1)
    return _context_cosines(scoring_model, samples)
