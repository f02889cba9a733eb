"""End-to-end experiment helpers: degrade, train, restore, score.

Every run derives its component seeds from one root seed in a fixed order:
``[0]`` network training, ``[1]`` training-image noise, ``[2 + k]`` noise for
held-out image ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import Image, degrade, gaussian_psf
from .metrics import MetricReport, evaluate
from .patches import PatchGeometry
from .rfn import RfnConfig
from .rnn import RnnParams, TrainConfig, infer_image, prepare_dataset, train

__all__ = ["component_seeds", "EvalCase", "RestorationRow", "train_restorer", "restore_and_score",
           "noise_robustness"]


def component_seeds(root: int, count: int) -> list[int]:
    """``count`` independent 32-bit seeds derived from ``root``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return [int(s) for s in np.random.SeedSequence(root).generate_state(count, dtype=np.uint32)]


@dataclass(frozen=True)
class EvalCase:
    name: str
    clean: Image
    degraded: Image


@dataclass(frozen=True)
class RestorationRow:
    name: str
    before: MetricReport
    after: MetricReport
    restored: Image = field(repr=False, compare=False)

    @property
    def psnr_gain(self) -> float:
        return self.after.psnr_db - self.before.psnr_db

    @property
    def ssim_gain(self) -> float:
        return self.after.ssim - self.before.ssim


def train_restorer(clean: Image, degraded: Image, cfg: TrainConfig, geom: PatchGeometry,
                   rfn: RfnConfig | None = None) -> tuple[RnnParams, list]:
    ds = prepare_dataset(degraded, clean, geom, cfg.mode, rfn)
    return train(ds, cfg, geom, rfn)


def restore_and_score(params: RnnParams, cases, geom: PatchGeometry, mode: str,
                      rfn: RfnConfig | None = None, threads: int = 1) -> list[RestorationRow]:
    rows = []
    for case in cases:
        est = infer_image(case.degraded, params, geom, mode, rfn, threads=threads)
        rows.append(RestorationRow(case.name, evaluate(case.clean, case.degraded), evaluate(case.clean, est), est))
    return rows


def noise_robustness(
    train_clean: Image,
    tests: dict,
    sigmas,
    modes,
    seeds,
    cfg: TrainConfig,
    geom: PatchGeometry,
    rfn: RfnConfig | None = None,
    psf_size: int = 25,
    psf_sigma: float = 1.6,
    train_sigma: float = float(np.sqrt(2.0)),
    threads: int = 1,
) -> dict:
    """Mean restored PSNR per ``(mode, sigma)`` and seed.

    For each root seed both modes train on the same degraded copy of
    ``train_clean`` (noise level ``train_sigma``), then restore every image
    of ``tests`` at each test noise level.  Returns
    ``{(mode, sigma): np.ndarray of per-seed mean PSNR}``.
    """
    psf = gaussian_psf(psf_size, psf_sigma)
    names = sorted(tests)
    out = {(mode, s): [] for mode in modes for s in sigmas}
    for root in seeds:
        train_seed, noise_seed, *test_seeds = component_seeds(root, 2 + len(names) * len(sigmas))
        deg = degrade(train_clean, psf, train_sigma, noise_seed)
        cases = {}
        for si, s in enumerate(sigmas):
            cases[s] = [EvalCase(n, tests[n], degrade(tests[n], psf, s, test_seeds[si * len(names) + k]))
                        for k, n in enumerate(names)]
        for mode in modes:
            mcfg = replace(cfg, mode=mode, seed=train_seed)
            params, _ = train_restorer(train_clean, deg, mcfg, geom, rfn)
            for s in sigmas:
                rows = restore_and_score(params, cases[s], geom, mode, rfn, threads)
                out[(mode, s)].append(float(np.mean([r.after.psnr_db for r in rows])))
    return {k: np.array(v) for k, v in out.items()}
