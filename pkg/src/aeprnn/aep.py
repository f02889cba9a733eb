"""Sample-size bounds from typical-set counting, and the sample-size sweep.

The bounds take a sample size ``m``, a sequence length ``dim`` and a rate
(entropy or mutual information, bits/symbol).  With ``T = 2**(dim * rate)``
typical sequences and training error ``delta_m``:

* ``m >= T``: the generalisation error is bounded by ``delta_m``;
* ``m < T``:  it is bounded by ``1 - m / T * (1 - delta_m)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import Image
from .patches import PatchGeometry, subsample
from .rfn import RfnConfig
from .rnn import TrainConfig, TrainingDiverged, infer_image, predict, prepare_dataset, train

__all__ = [
    "BoundInputs",
    "SweepRecord",
    "empirical_entropy",
    "generalization_bound_noiseless",
    "generalization_bound_noisy",
    "gaussian_mi_cap",
    "infer_mi_lower_bound",
    "clamped_loss",
    "run_sweep",
    "write_sweep_csv",
    "read_sweep_csv",
]


@dataclass(frozen=True)
class BoundInputs:
    m: int
    dim: int
    rate: float
    delta_m: float

    def __post_init__(self):
        if self.m < 1 or self.dim < 1:
            raise ValueError("m and dim must be positive integers")
        if not self.rate >= 0:
            raise ValueError("rate must be non-negative")
        if not 0 <= self.delta_m < 1:
            raise ValueError("delta_m must lie in [0, 1)")


@dataclass(frozen=True)
class SweepRecord:
    m: int
    train_error: float
    recovery_error: float
    seed: int
    failed: bool = False


def empirical_entropy(samples, bins: int = 64) -> float:
    """Plug-in entropy in bits of the pooled coordinates.

    Every coordinate of every sample is one symbol.  Values are quantised
    into ``bins`` equal-width cells spanning the observed range.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = np.concatenate([np.ravel(np.asarray(s, dtype=np.float64)) for s in samples]) if len(samples) else np.array([])
    if x.size == 0:
        raise ValueError("no samples")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return 0.0
    idx = np.minimum(((x - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    p = np.bincount(idx, minlength=bins) / x.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _bound(m: int, exponent: float, delta_m: float) -> float:
    # exponent = dim * rate; compare in log2 so huge typical sets never overflow
    log_ratio = math.log2(m) - exponent
    if log_ratio >= 0:
        return delta_m
    value = 1.0 - 2.0**log_ratio * (1.0 - delta_m)
    return min(max(value, delta_m), 1.0)


def generalization_bound_noiseless(b: BoundInputs) -> float:
    """Error bound with a deterministic labelling (rate = H(Y))."""
    return _bound(b.m, b.dim * b.rate, b.delta_m)


def generalization_bound_noisy(b: BoundInputs) -> float:
    """Error bound under additive noise (rate = I(X;Y))."""
    return _bound(b.m, b.dim * b.rate, b.delta_m)


def gaussian_mi_cap(sigma_x: float, sigma_n: float) -> float:
    """Upper bound 0.5 * log2(1 + sigma_x^2 / sigma_n^2) on I(X;Y) in bits."""
    if sigma_n <= 0:
        raise ValueError("sigma_n must be positive")
    return 0.5 * math.log2(1.0 + sigma_x**2 / sigma_n**2)


def infer_mi_lower_bound(records: Sequence[SweepRecord], n: int) -> float:
    """Tightest I(X;Y) implied by the observed errors, in bits/symbol.

    Each record gives ``(1/n) log2(m (1 - train_error) / (1 - recovery_error))``;
    the maximum over records is returned.  Failed records are skipped.
    """
    if n < 1:
        raise ValueError("n must be positive")
    usable = [r for r in records if not r.failed]
    if not usable:
        raise ValueError("no usable sweep records")
    best = -math.inf
    for r in usable:
        if not (r.recovery_error < 1 and r.train_error < 1):
            raise ValueError(f"record m={r.m} has an error >= 1")
        value = math.log2(r.m * (1.0 - r.train_error) / (1.0 - r.recovery_error)) / n
        best = max(best, value)
    return best


def clamped_loss(estimate: np.ndarray, target: np.ndarray) -> float:
    """Mean of per-pixel squared errors clamped to ``[0, 1]`` (inputs on [0, 1] scale)."""
    d = np.asarray(estimate, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(np.minimum(d * d, 1.0)))


def run_sweep(
    degraded: Image,
    clean: Image,
    test_pairs,
    m_grid,
    cfg: TrainConfig,
    geom: PatchGeometry,
    rfn: RfnConfig | None = None,
    threads: int = 1,
) -> list[SweepRecord]:
    """Train on ``m`` random training windows for each ``m`` in ``m_grid``.

    Training error is the clamped loss on the ``m`` training windows; the
    recovery error is the clamped loss over every pixel of the held-out
    ``(degraded, clean)`` pairs.  Subsampling uses ``cfg.seed + m`` so each
    entry is reproducible on its own.  Records come back sorted by ``m``.
    """
    full = prepare_dataset(degraded, clean, geom, cfg.mode, rfn)
    if any(m < 1 or m > len(full) for m in m_grid):
        raise ValueError(f"m_grid values must lie in [1, {len(full)}]")
    c1 = (rfn or RfnConfig()).c1
    records = []
    for m in sorted(set(int(v) for v in m_grid)):
        subset = subsample(full, m, cfg.seed + m)
        try:
            params, _ = train(subset, cfg, geom, rfn)
        except TrainingDiverged:
            records.append(SweepRecord(m, math.nan, math.nan, cfg.seed, failed=True))
            continue
        fit = predict(subset.inputs, subset.rfn_inputs, params, cfg.mode, c1)[:, 0]
        train_error = clamped_loss(fit, subset.targets)
        losses, counts = [], []
        for deg_t, clean_t in test_pairs:
            est = infer_image(deg_t, params, geom, cfg.mode, rfn, threads=threads)
            losses.append(clamped_loss(est.data / est.peak, clean_t.data / clean_t.peak) * clean_t.data.size)
            counts.append(clean_t.data.size)
        records.append(SweepRecord(m, train_error, sum(losses) / sum(counts), cfg.seed))
    return records


def write_sweep_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("m,train_error,recovery_error,seed\n")
        for r in records:
            fh.write(f"{r.m},{r.train_error:.10g},{r.recovery_error:.10g},{r.seed}\n")


def read_sweep_csv(path) -> list[SweepRecord]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        tr, rec = float(row["train_error"]), float(row["recovery_error"])
        out.append(SweepRecord(int(row["m"]), tr, rec, int(row["seed"]), failed=math.isnan(tr)))
    return out
