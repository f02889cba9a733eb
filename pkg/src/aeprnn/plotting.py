"""Report figures written straight to image files.

Figures are built on :class:`matplotlib.figure.Figure` directly, so no GUI
backend or global pyplot state is involved.
"""
from __future__ import annotations

import math

import numpy as np
from matplotlib.figure import Figure

from .aep import BoundInputs, generalization_bound_noisy
from .imaging import Image
from .metrics import psnr

__all__ = ["plot_training_log", "plot_sweep", "plot_noise_robustness", "plot_rfn_preview", "plot_restoration"]


def _save(fig: Figure, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)


def plot_training_log(log, path) -> None:
    """Epoch-mean training loss on a log axis."""
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    if log:
        epochs, losses = zip(*log)
        ax.semilogy(epochs, losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss (MSE)")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_sweep(records, path, mi_bits: float | None = None, n: int | None = None) -> None:
    """Training and recovery error against sample size.

    With ``mi_bits`` and ``n`` the implied error bound is overlaid using the
    smallest observed training error.
    """
    good = sorted((r for r in records if not r.failed), key=lambda r: r.m)
    fig = Figure(figsize=(5.5, 3.8))
    ax = fig.add_subplot()
    if good:
        m = np.array([r.m for r in good], dtype=float)
        ax.loglog(m, [max(r.train_error, 1e-12) for r in good], "o-", label="training error")
        ax.loglog(m, [max(r.recovery_error, 1e-12) for r in good], "s-", label="recovery error")
        if mi_bits is not None and n is not None:
            dm = min(r.train_error for r in good)
            grid = np.unique(np.geomspace(m.min(), m.max(), 64).astype(int))
            bound = [generalization_bound_noisy(BoundInputs(int(g), n, mi_bits, dm)) for g in grid]
            ax.loglog(grid, bound, "k--", lw=1, label=f"bound, I = {mi_bits:.3g} bit")
        ax.legend(fontsize=8)
    ax.set_xlabel("training samples m")
    ax.set_ylabel("clamped squared error")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_noise_robustness(results: dict, path) -> None:
    """Mean PSNR (with per-seed spread) against test noise level, one line per mode."""
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    for mode in sorted({k[0] for k in results}):
        sigmas = sorted(s for (md, s) in results if md == mode)
        mean = [float(np.mean(results[(mode, s)])) for s in sigmas]
        spread = [float(np.std(results[(mode, s)])) for s in sigmas]
        ax.errorbar(sigmas, mean, yerr=spread, marker="o", capsize=3, label=mode)
    ax.set_xlabel("test noise sigma")
    ax.set_ylabel("restored PSNR (dB)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def _show(ax, data, title, vmin=None, vmax=None):
    im = ax.imshow(data, cmap="gray", vmin=vmin, vmax=vmax, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_axis_off()
    return im


def plot_rfn_preview(image: Image, normalized: Image, divisor: Image, path) -> None:
    """Input, clipped local energy and normalised output side by side."""
    fig = Figure(figsize=(10, 3.6))
    axes = fig.subplots(1, 3)
    _show(axes[0], image.data, "input", 0, image.peak)
    fig.colorbar(_show(axes[1], divisor.data, "clipped local energy"), ax=axes[1], fraction=0.046)
    fig.colorbar(_show(axes[2], normalized.data, "normalised"), ax=axes[2], fraction=0.046)
    _save(fig, path)


def plot_restoration(clean: Image, degraded: Image, restored: Image, path, title: str = "") -> None:
    """Clean, degraded and restored images with their PSNR in the titles."""
    fig = Figure(figsize=(10, 3.6))
    axes = fig.subplots(1, 3)
    _show(axes[0], clean.data, "clean", 0, clean.peak)

    def label(name, img):
        v = psnr(clean, img)
        return f"{name} ({'inf' if math.isinf(v) else f'{v:.2f}'} dB)"

    _show(axes[1], degraded.data, label("degraded", degraded), 0, clean.peak)
    _show(axes[2], restored.data, label("restored", restored), 0, clean.peak)
    if title:
        fig.suptitle(title, fontsize=10)
    _save(fig, path)
