"""Experiment manifest: a flat key=value file with section headers.

A manifest names one experiment mode, the corpora it reads, every training
and selection knob, and the output directory.  Every run writes a resolved
copy (all defaults made explicit) next to its artifacts, so any output
directory can be reproduced from the file it contains.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from adaptembed.calibrate import DEFAULT_HELDOUT_FRACTION
from adaptembed.drift import DEFAULT_K, DEFAULT_LAMBDA, DEFAULT_TOP_M, LAMBDA_GRID
from adaptembed.select import (
    DEFAULT_CUTOFF_QUANTILES,
    DEFAULT_MIN_VOTES,
    DEFAULT_TOP_R,
)
from adaptembed.trainer import TrainConfig

MODES = (
    "tgt",
    "src",
    "src-tune",
    "reg-freq",
    "reg-sense",
    "src-plus-tgt",
    "srcsel",
    "srcsel-word",
    "srcsel-r",
    "srcsel-c",
)
#: Modes that read a source corpus in addition to the target corpus.
SOURCE_MODES = tuple(m for m in MODES if m != "tgt")
#: Modes that run retrieval-based selection before joint training.
SRCSEL_MODES = ("srcsel", "srcsel-word", "srcsel-r", "srcsel-c")
#: Modes that pull target vectors toward source vectors during training.
REG_MODES = ("reg-freq", "reg-sense")

DEFAULT_ALPHA = 1.0
DEFAULT_ALPHA_GRID = (0.5, 1.0, 2.0)


@dataclass
class Manifest:
    """One experiment: mode, corpora, knobs, output directory."""

    mode: str
    target: str
    output: str
    source: str | None = None
    seed: int = 0
    workers: int = 1
    min_count: int = 5
    paragraph_mode: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    # selection
    top_r: int = DEFAULT_TOP_R
    min_votes: int = DEFAULT_MIN_VOTES
    cutoff_quantiles: tuple[float, ...] = DEFAULT_CUTOFF_QUANTILES
    alpha: float = DEFAULT_ALPHA
    # drift scoring
    drift_k: int = DEFAULT_K
    drift_lambda: float = DEFAULT_LAMBDA
    drift_top_m: int = DEFAULT_TOP_M
    # calibration
    calibrate: bool = False
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    heldout_fraction: float = DEFAULT_HELDOUT_FRACTION

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in SOURCE_MODES and not self.source:
            raise ValueError(f"mode {self.mode!r} requires a source corpus")
        if not self.target:
            raise ValueError("target corpus path is required")
        if not self.output:
            raise ValueError("output directory is required")
        if self.min_count < 1:
            raise ValueError("min_count must be positive")
        # The one experiment seed and worker count flow into training.
        self.train = replace(self.train, seed=self.seed, workers=self.workers)


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def parse_manifest(text: str) -> Manifest:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    if "experiment" not in parser:
        raise ValueError("manifest must have an [experiment] section")
    exp = parser["experiment"]
    known = {"experiment", "train", "selection", "calibration", "drift"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValueError(f"unknown manifest sections: {sorted(unknown)}")

    tr = parser["train"] if "train" in parser else {}
    train = TrainConfig(
        dim=int(tr.get("dim", TrainConfig.dim)),
        window=int(tr.get("window", TrainConfig.window)),
        negatives=int(tr.get("negatives", TrainConfig.negatives)),
        epochs=int(tr.get("epochs", TrainConfig.epochs)),
        initial_lr=float(tr.get("initial_lr", TrainConfig.initial_lr)),
        distortion=float(tr.get("distortion", TrainConfig.distortion)),
        reg_weight=float(tr.get("reg_weight", TrainConfig.reg_weight)),
    )
    sel = parser["selection"] if "selection" in parser else {}
    cal = parser["calibration"] if "calibration" in parser else {}
    dr = parser["drift"] if "drift" in parser else {}

    def get_bool(section, key, default):
        raw = section.get(key)
        if raw is None:
            return default
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {key}: {raw!r}")

    return Manifest(
        mode=exp.get("mode", ""),
        target=exp.get("target", ""),
        source=exp.get("source") or None,
        output=exp.get("output", ""),
        seed=int(exp.get("seed", 0)),
        workers=int(exp.get("workers", 1)),
        min_count=int(exp.get("min_count", 5)),
        paragraph_mode=get_bool(exp, "paragraph_mode", False),
        train=train,
        top_r=int(sel.get("top_r", DEFAULT_TOP_R)),
        min_votes=int(sel.get("min_votes", DEFAULT_MIN_VOTES)),
        cutoff_quantiles=(
            _floats(sel["cutoff_quantiles"])
            if "cutoff_quantiles" in sel
            else DEFAULT_CUTOFF_QUANTILES
        ),
        alpha=float(sel.get("alpha", DEFAULT_ALPHA)),
        drift_k=int(dr.get("k", DEFAULT_K)),
        drift_lambda=float(dr.get("lambda", DEFAULT_LAMBDA)),
        drift_top_m=int(dr.get("top_m", DEFAULT_TOP_M)),
        calibrate=get_bool(cal, "calibrate", False),
        lambda_grid=(
            _floats(cal["lambda_grid"]) if "lambda_grid" in cal else LAMBDA_GRID
        ),
        alpha_grid=(
            _floats(cal["alpha_grid"]) if "alpha_grid" in cal else DEFAULT_ALPHA_GRID
        ),
        heldout_fraction=float(cal.get("heldout_fraction", DEFAULT_HELDOUT_FRACTION)),
    )


def load_manifest(path: str | Path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def format_manifest(m: Manifest) -> str:
    """Render with every knob explicit, in a fixed key order."""

    def fmt_floats(vals: Sequence[float]) -> str:
        return " ".join(f"{v:g}" for v in vals)

    out = io.StringIO()
    out.write("[experiment]\n")
    out.write(f"mode = {m.mode}\n")
    out.write(f"target = {m.target}\n")
    if m.source:
        out.write(f"source = {m.source}\n")
    out.write(f"output = {m.output}\n")
    out.write(f"seed = {m.seed}\n")
    out.write(f"workers = {m.workers}\n")
    out.write(f"min_count = {m.min_count}\n")
    out.write(f"paragraph_mode = {str(m.paragraph_mode).lower()}\n")
    t = m.train
    out.write("\n[train]\n")
    out.write(f"dim = {t.dim}\n")
    out.write(f"window = {t.window}\n")
    out.write(f"negatives = {t.negatives}\n")
    out.write(f"epochs = {t.epochs}\n")
    out.write(f"initial_lr = {t.initial_lr:g}\n")
    out.write(f"distortion = {t.distortion:g}\n")
    out.write(f"reg_weight = {t.reg_weight:g}\n")
    out.write("\n[selection]\n")
    out.write(f"top_r = {m.top_r}\n")
    out.write(f"min_votes = {m.min_votes}\n")
    out.write(f"cutoff_quantiles = {fmt_floats(m.cutoff_quantiles)}\n")
    out.write(f"alpha = {m.alpha:g}\n")
    out.write("\n[drift]\n")
    out.write(f"k = {m.drift_k}\n")
    out.write(f"lambda = {m.drift_lambda:g}\n")
    out.write(f"top_m = {m.drift_top_m}\n")
    out.write("\n[calibration]\n")
    out.write(f"calibrate = {str(m.calibrate).lower()}\n")
    out.write(f"lambda_grid = {fmt_floats(m.lambda_grid)}\n")
    out.write(f"alpha_grid = {fmt_floats(m.alpha_grid)}\n")
    out.write(f"heldout_fraction = {m.heldout_fraction:g}\n")
    return out.getvalue()


def save_manifest(m: Manifest, path: str | Path) -> None:
    Path(path).write_text(format_manifest(m), encoding="utf-8")
