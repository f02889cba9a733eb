"""Receptive-field normalisation (RFN) of 2D images.

Each pixel is divided by a clipped, kernel-weighted local energy so that
strong and weak image regions end up on a comparable scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Image, convolve2d
from .sparse import Dictionary

__all__ = [
    "RfnKernel",
    "RfnConfig",
    "KernelReport",
    "gaussian_rfn_kernel",
    "validate_rfn_kernel",
    "local_energy",
    "clip_energy",
    "normalize_image",
    "normalize_array",
    "detect_support",
]


@dataclass(frozen=True)
class RfnKernel:
    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] % 2 == 0:
            raise ValueError(f"RFN kernel must be square with odd side, got {t.shape}")
        object.__setattr__(self, "taps", t)

    @property
    def side(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class RfnConfig:
    """Clipping threshold ``tau`` and the energy-restore gain ``c1``.

    ``kernel_side``/``kernel_sigma`` describe the truncated Gaussian window;
    ``kernel_sigma=None`` means ``kernel_side / 4``.
    """

    tau: float = 0.25
    c1: float = 1.0
    kernel_side: int = 7
    kernel_sigma: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.kernel_side < 1 or self.kernel_side % 2 == 0:
            raise ValueError(f"RFN kernel side must be odd, got {self.kernel_side}")

    def kernel(self) -> RfnKernel:
        return gaussian_rfn_kernel(self.kernel_side, self.kernel_sigma)


@dataclass(frozen=True)
class KernelReport:
    non_negative: bool
    symmetric: bool
    centre_peak: bool
    finite_energy: bool

    @property
    def ok(self) -> bool:
        return self.non_negative and self.symmetric and self.centre_peak and self.finite_energy

    def failures(self) -> list[str]:
        return [name for name, passed in vars(self).items() if not passed]


def gaussian_rfn_kernel(side: int = 7, sigma: float | None = None) -> RfnKernel:
    """Truncated Gaussian window with unit sum."""
    sigma = side / 4 if sigma is None else sigma
    ax = np.arange(side) - (side - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    return RfnKernel(g / g.sum())


def validate_rfn_kernel(k: RfnKernel) -> KernelReport:
    h = k.taps
    c = k.side // 2
    finite = bool(np.all(np.isfinite(h)))
    return KernelReport(
        non_negative=bool(np.all(h >= 0)),
        symmetric=bool(np.array_equal(h, h[::-1, ::-1])),
        centre_peak=bool(np.all(h[c, c] >= h)),
        finite_energy=finite and float(h.sum()) > 0,
    )


def _energy(s: np.ndarray, k: RfnKernel) -> np.ndarray:
    if k.side > min(s.shape):
        raise ValueError(f"RFN kernel side {k.side} larger than image {s.shape}")
    e2 = convolve2d(Image(s * s, 1.0), k.taps, "replicate-edge").data
    return np.sqrt(np.maximum(e2, 0.0))


def local_energy(img: Image, k: RfnKernel) -> Image:
    """sigma_S = sqrt(h * S^2), replicate-edge boundary."""
    return img.with_data(_energy(img.data, k))


def clip_energy(sigma_map: Image, tau: float) -> Image:
    """Keep sigma where |sigma| >= tau, replace it with 1 elsewhere."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s = sigma_map.data
    return sigma_map.with_data(np.where(np.abs(s) >= tau, s, 1.0))


def normalize_array(s: np.ndarray, k: RfnKernel, tau: float):
    sigma = _energy(s, k)
    sigma = np.where(np.abs(sigma) >= tau, sigma, 1.0)
    return s / sigma, sigma


def normalize_image(img: Image, k: RfnKernel, tau: float):
    """Return ``(S / sigma_clipped, sigma_clipped)``.

    The divisor map is returned so callers can restore the local energy.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    out, sigma = normalize_array(img.data, k, tau)
    return img.with_data(out), img.with_data(sigma)


def detect_support(y, D: Dictionary, beta1: float) -> np.ndarray:
    """First-iteration support indicator: 1 where |D^T y| >= beta1."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (D.n_rows,):
        raise ValueError(f"signal length {y.shape} does not match dictionary rows {D.n_rows}")
    if not beta1 > 0:
        raise ValueError("beta1 must be positive")
    return (np.abs(D.atoms.T @ y) >= beta1).astype(np.int8)
