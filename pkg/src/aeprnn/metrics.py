"""PSNR / SSIM figures of merit on single-channel images."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import Image

__all__ = ["MetricReport", "psnr", "ssim", "evaluate", "format_metric_row", "ssim_window"]


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    n_pixels: int


def _check_pair(reference: Image, estimate: Image):
    if reference.shape != estimate.shape:
        raise ValueError(f"dimension mismatch: {reference.shape} vs {estimate.shape}")
    if reference.peak != estimate.peak:
        raise ValueError(f"peak mismatch: {reference.peak} vs {estimate.peak}")


def psnr(reference: Image, estimate: Image) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    _check_pair(reference, estimate)
    mse = float(np.mean((reference.data - estimate.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(reference.peak**2 / mse)


def ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def _local_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    views = sliding_window_view(x, w.shape)
    return np.einsum("ijkl,kl->ij", views, w)


def ssim(
    reference: Image,
    estimate: Image,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity over all fully-contained Gaussian windows.

    Local statistics use a ``window`` x ``window`` Gaussian weighting with
    standard deviation ``sigma``; windows never cross the image border.
    """
    _check_pair(reference, estimate)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"SSIM window must be a positive odd integer, got {window}")
    if window > min(reference.shape):
        raise ValueError(f"SSIM window {window} larger than image {reference.shape}")
    w = ssim_window(window, sigma)
    x, y = reference.data, estimate.data
    c1 = (k1 * reference.peak) ** 2
    c2 = (k2 * reference.peak) ** 2
    mx, my = _local_mean(x, w), _local_mean(y, w)
    sxx = _local_mean(x * x, w) - mx * mx
    syy = _local_mean(y * y, w) - my * my
    sxy = _local_mean(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def evaluate(reference: Image, estimate: Image) -> MetricReport:
    return MetricReport(psnr(reference, estimate), ssim(reference, estimate), reference.data.size)


def format_metric_row(image_id: str, report: MetricReport) -> str:
    """``image_id,psnr_db,ssim`` with 4 decimals; infinite PSNR prints as ``inf``."""
    p = "inf" if math.isinf(report.psnr_db) else f"{report.psnr_db:.4f}"
    return f"{image_id},{p},{report.ssim:.4f}"
