"""Plain-text ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected so a
typo never silently falls back to a default.  Relative paths resolve against
the directory holding the config file; ``corpus:<name>`` refers to one of the
bundled test images.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .imaging import Image, corpus_names, load_corpus_image, load_image
from .patches import PatchGeometry
from .rfn import RfnConfig
from .rnn import MODES, TrainConfig

__all__ = ["ConfigError", "Paths", "ExperimentConfig", "parse_config", "parse_config_text", "dump_config",
           "resolve_image"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    clean: str | None = None
    degraded: str | None = None
    test_clean: tuple = ()
    output_dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: PatchGeometry = field(default_factory=PatchGeometry)
    train: TrainConfig = field(default_factory=TrainConfig)
    rfn: RfnConfig = field(default_factory=RfnConfig)
    psf_size: int = 25
    psf_sigma: float = 1.6
    noise_sigma: float = math.sqrt(2.0)
    paths: Paths = field(default_factory=Paths)
    crop: tuple | None = None  # (top, left, height, width) applied to the training pair
    m_grid: tuple = ()
    mi_n: int | None = None  # sequence length for the MI bound; None -> L_t * N
    threads: int = 1

    @property
    def psf(self) -> tuple:
        return (self.psf_size, self.psf_sigma)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed))

    @property
    def resolved_mi_n(self) -> int:
        return self.mi_n if self.mi_n is not None else self.geometry.l_t * self.geometry.n


def _int(v):
    return int(v, 10)


def _opt_float(v):
    return None if v.lower() in ("none", "auto") else float(v)


def _int_list(v):
    return tuple(int(t) for t in v.replace(",", " ").split())


def _path_list(v):
    return tuple(t.strip() for t in v.split(",") if t.strip())


def _mode(v):
    if v not in MODES:
        raise ValueError(f"expected one of {MODES}")
    return v


# key -> (section, attribute, parser)
_KEYS = {
    "l_t": ("geometry", "l_t", _int),
    "n_left": ("geometry", "n_left", _int),
    "n_right": ("geometry", "n_right", _int),
    "learning_rate": ("train", "learning_rate", float),
    "max_epochs": ("train", "max_epochs", _int),
    "batch_size": ("train", "batch_size", _int),
    "seed": ("train", "seed", _int),
    "grad_clip": ("train", "grad_clip", _opt_float),
    "target_train_loss": ("train", "target_train_loss", float),
    "mode": ("train", "mode", _mode),
    "n_hidden": ("train", "n_hidden", _int),
    "tau": ("rfn", "tau", float),
    "c1": ("rfn", "c1", float),
    "rfn_kernel_side": ("rfn", "kernel_side", _int),
    "rfn_kernel_sigma": ("rfn", "kernel_sigma", _opt_float),
    "psf_size": (None, "psf_size", _int),
    "psf_sigma": (None, "psf_sigma", float),
    "noise_sigma": (None, "noise_sigma", float),
    "crop": (None, "crop", lambda v: None if v.lower() == "none" else _int_list(v)),
    "m_grid": (None, "m_grid", _int_list),
    "mi_n": (None, "mi_n", lambda v: None if v.lower() == "auto" else _int(v)),
    "threads": (None, "threads", _int),
    "clean": ("paths", "clean", str),
    "degraded": ("paths", "degraded", str),
    "test_clean": ("paths", "test_clean", _path_list),
    "output_dir": ("paths", "output_dir", str),
}


def _resolve_path(value: str, base: Path) -> str:
    if value.startswith("corpus:"):
        return value
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.psf_size < 1 or cfg.psf_size % 2 == 0:
        raise ConfigError(f"psf_size must be a positive odd integer, got {cfg.psf_size}")
    if not cfg.psf_sigma > 0:
        raise ConfigError(f"psf_sigma must be positive, got {cfg.psf_sigma}")
    if cfg.noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be non-negative, got {cfg.noise_sigma}")
    if cfg.crop is not None and (len(cfg.crop) != 4 or min(cfg.crop) < 0 or min(cfg.crop[2:]) < 1):
        raise ConfigError(f"crop must be 'top, left, height, width', got {cfg.crop}")
    if any(m < 1 for m in cfg.m_grid):
        raise ConfigError("m_grid entries must be positive")
    if cfg.mi_n is not None and cfg.mi_n < 1:
        raise ConfigError("mi_n must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    p = cfg.paths
    for label, value in [("clean", p.clean), ("degraded", p.degraded)] + [("test_clean", t) for t in p.test_clean]:
        if value is None:
            continue
        if value.startswith("corpus:"):
            if value[7:] not in corpus_names():
                raise ConfigError(f"{label}: no bundled image {value[7:]!r}")
        elif not Path(value).is_file():
            raise ConfigError(f"{label}: file not found: {value}")


def parse_config_text(text: str, base_dir=".", source: str = "<config>") -> ExperimentConfig:
    base = Path(base_dir)
    sections = {"geometry": {}, "train": {}, "rfn": {}, "paths": {}, None: {}}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        section, attr, parse = _KEYS[key]
        try:
            parsed = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r} ({exc})") from None
        if section == "paths":
            if isinstance(parsed, tuple):
                parsed = tuple(_resolve_path(v, base) for v in parsed)
            else:
                parsed = _resolve_path(parsed, base)
        sections[section][attr] = parsed
    try:
        cfg = ExperimentConfig(
            geometry=PatchGeometry(**sections["geometry"]),
            train=TrainConfig(**sections["train"]),
            rfn=RfnConfig(**sections["rfn"]),
            paths=Paths(**sections["paths"]),
            **sections[None],
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    _validate(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), path.parent, str(path))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key with its effective value; parses back to an equal config."""
    lines = ["# fully resolved experiment configuration"]
    for key, (section, attr, _) in _KEYS.items():
        holder = cfg if section is None else getattr(cfg, section)
        value = getattr(holder, attr)
        if key == "mi_n" and value is None:
            value = "auto"
        if key in ("clean", "degraded") and value is None:
            continue
        if key == "test_clean" and not value:
            continue
        if key == "m_grid" and not value:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def resolve_image(ref: str) -> Image:
    """Load a path or a ``corpus:<name>`` reference."""
    if ref.startswith("corpus:"):
        return load_corpus_image(ref[7:])
    return load_image(ref)
