"""Analysis-patch extraction: one ``L_t x N`` window per output pixel.

The window for pixel ``(i, j)`` spans rows ``i - L_t + 1 .. i`` and columns
``j - n_left .. j + n_right``; out-of-range samples replicate the nearest
edge pixel so every pixel of the image gets a window.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import Image

__all__ = [
    "PatchGeometry",
    "AnalysisSample",
    "PatchDataset",
    "extract_patch",
    "patch_stack",
    "build_dataset",
    "subsample",
]


@dataclass(frozen=True)
class PatchGeometry:
    l_t: int = 9
    n_left: int = 4
    n_right: int = 4

    def __post_init__(self):
        if self.l_t < 1 or self.n_left < 0 or self.n_right < 0:
            raise ValueError(f"invalid patch geometry {self}")

    @property
    def n(self) -> int:
        return self.n_left + self.n_right + 1


@dataclass(frozen=True)
class AnalysisSample:
    inputs: np.ndarray  # (l_t, N), row t = time step t
    target: float
    pixel_pos: tuple
    rfn_inputs: Optional[np.ndarray] = None


def _padded(data: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    return np.pad(data, ((geom.l_t - 1, 0), (geom.n_left, geom.n_right)), mode="edge")


def patch_stack(data: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    """All windows of a 2D array, shape ``(H * W, l_t, N)`` in row-major pixel order."""
    h, w = data.shape
    views = sliding_window_view(_padded(np.asarray(data, dtype=np.float64), geom), (geom.l_t, geom.n))
    return views.reshape(h * w, geom.l_t, geom.n)


def extract_patch(img: Image, i: int, j: int, geom: PatchGeometry) -> np.ndarray:
    if not (0 <= i < img.height and 0 <= j < img.width):
        raise IndexError(f"pixel ({i}, {j}) outside image of shape {img.shape}")
    rows = np.clip(np.arange(i - geom.l_t + 1, i + 1), 0, img.height - 1)
    cols = np.clip(np.arange(j - geom.n_left, j + geom.n_right + 1), 0, img.width - 1)
    return img.data[np.ix_(rows, cols)].copy()


class PatchDataset(Sequence):
    """Array-backed sequence of :class:`AnalysisSample`.

    ``inputs`` / ``rfn_inputs`` have shape ``(m, l_t, N)``; ``targets`` has
    shape ``(m,)``; ``positions`` has shape ``(m, 2)``.
    """

    def __init__(self, inputs, targets, positions, rfn_inputs=None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.positions = np.asarray(positions, dtype=np.int64)
        self.rfn_inputs = None if rfn_inputs is None else np.asarray(rfn_inputs, dtype=np.float64)
        m = len(self.targets)
        if self.inputs.shape[0] != m or self.positions.shape[0] != m:
            raise ValueError("inputs, targets and positions must have equal length")
        if self.rfn_inputs is not None and self.rfn_inputs.shape != self.inputs.shape:
            raise ValueError("rfn_inputs must match inputs in shape")

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return self.take(np.arange(len(self))[idx])
        return AnalysisSample(
            self.inputs[idx],
            float(self.targets[idx]),
            (int(self.positions[idx, 0]), int(self.positions[idx, 1])),
            None if self.rfn_inputs is None else self.rfn_inputs[idx],
        )

    def take(self, indices) -> "PatchDataset":
        indices = np.asarray(indices, dtype=np.int64)
        rfn = None if self.rfn_inputs is None else self.rfn_inputs[indices]
        return PatchDataset(self.inputs[indices], self.targets[indices], self.positions[indices], rfn)

    @classmethod
    def from_samples(cls, samples) -> "PatchDataset":
        if isinstance(samples, PatchDataset):
            return samples
        samples = list(samples)
        if not samples:
            raise ValueError("empty batch")
        rfn = None
        if samples[0].rfn_inputs is not None:
            rfn = np.stack([s.rfn_inputs for s in samples])
        return cls(
            np.stack([s.inputs for s in samples]),
            np.array([s.target for s in samples]),
            np.array([s.pixel_pos for s in samples]),
            rfn,
        )


def build_dataset(
    degraded,
    clean,
    geom: PatchGeometry,
    rfn_inputs=None,
) -> PatchDataset:
    """One sample per pixel, row-major; targets are the clean pixels.

    Accepts :class:`Image` objects or plain 2D arrays (already scaled).
    """
    deg = degraded.data if isinstance(degraded, Image) else np.asarray(degraded, dtype=np.float64)
    cln = clean.data if isinstance(clean, Image) else np.asarray(clean, dtype=np.float64)
    if deg.shape != cln.shape:
        raise ValueError(f"degraded {deg.shape} and clean {cln.shape} differ in shape")
    rfn = None
    if rfn_inputs is not None:
        r = rfn_inputs.data if isinstance(rfn_inputs, Image) else np.asarray(rfn_inputs, dtype=np.float64)
        if r.shape != deg.shape:
            raise ValueError(f"rfn inputs {r.shape} differ from image shape {deg.shape}")
        rfn = patch_stack(r, geom)
    h, w = deg.shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    positions = np.stack([ii.ravel(), jj.ravel()], axis=1)
    return PatchDataset(patch_stack(deg, geom), cln.ravel().copy(), positions, rfn)


def subsample(dataset: PatchDataset, m: int, seed: int) -> PatchDataset:
    """Uniform draw of ``m`` samples without replacement."""
    if not 1 <= m <= len(dataset):
        raise ValueError(f"cannot draw {m} samples from a dataset of {len(dataset)}")
    idx = np.random.default_rng(seed).choice(len(dataset), size=m, replace=False)
    return PatchDataset.from_samples(dataset).take(idx)
