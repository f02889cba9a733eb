"""Image containers, raster I/O and the blur + noise degradation pipeline.

Intensities are kept as float64 arrays at their native scale (``[0, peak]``)
and are only clamped/rounded when written to disk.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "Image",
    "Psf",
    "load_image",
    "save_image",
    "gaussian_psf",
    "convolve2d",
    "add_gaussian_noise",
    "degrade",
    "write_psf_text",
    "corpus_names",
    "load_corpus_image",
    "BT601",
]

#: ITU-R BT.601 luma weights for (R, G, B).
BT601 = (0.299, 0.587, 0.114)

_BOUNDARY_MODES = {"replicate-edge": "nearest", "zero-pad": "constant"}


@dataclass(frozen=True)
class Image:
    """Single-channel image with a declared peak value."""

    data: np.ndarray
    peak: float = 255.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"image data must be a non-empty 2D grid, got shape {arr.shape}")
        if not self.peak > 0:
            raise ValueError(f"peak must be positive, got {self.peak}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "peak", float(self.peak))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data) -> "Image":
        return Image(data, self.peak)

    def scaled(self) -> np.ndarray:
        """Intensities divided by ``peak`` (nominal range ``[0, 1]``)."""
        return self.data / self.peak

    def crop(self, top: int, left: int, height: int, width: int) -> "Image":
        if top < 0 or left < 0 or top + height > self.height or left + width > self.width:
            raise ValueError("crop window falls outside the image")
        return Image(self.data[top:top + height, left:left + width].copy(), self.peak)


@dataclass(frozen=True)
class Psf:
    size: int
    sigma: float
    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.shape != (self.size, self.size):
            raise ValueError(f"PSF taps of shape {t.shape} do not match size {self.size}")
        if abs(t.sum() - 1.0) > 1e-12:
            raise ValueError(f"PSF taps must sum to 1, got {t.sum()!r}")
        if not np.allclose(t, t[::-1, ::-1], rtol=0, atol=1e-15):
            raise ValueError("PSF taps must be symmetric under 180-degree rotation")
        object.__setattr__(self, "taps", t)


def _read_pnm(path: Path):
    """Parse binary PGM (P5) / PPM (P6); returns (uint array, maxval)."""
    raw = path.read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        return None
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: zero-sized image")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height * channels
    body = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return body.reshape(shape).astype(np.float64), float(maxval)


def _read_with_pillow(path: Path):
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr, peak = np.asarray(im, dtype=np.float64), 65535.0
            elif mode in ("L", "RGB"):
                arr, peak = np.asarray(im, dtype=np.float64), 255.0
            elif mode in ("LA", "RGBA", "P", "1"):
                conv = im.convert("RGB" if mode in ("RGBA", "P") else "L")
                arr, peak = np.asarray(conv, dtype=np.float64), 255.0
            else:
                raise ValueError(f"{path}: unsupported pixel mode {mode!r}")
    except UnidentifiedImageError as exc:
        raise ValueError(f"{path}: unsupported raster format") from exc
    return arr, peak


def load_image(path, channel_policy: str = "luminance-of-rgb") -> Image:
    """Read a raster file into a single-channel :class:`Image`.

    Binary PGM/PPM are parsed directly; anything else goes through Pillow.
    RGB input is reduced to BT.601 luminance when ``channel_policy`` is
    ``"luminance-of-rgb"``; with ``"grayscale"`` an RGB file is rejected.
    """
    if channel_policy not in ("grayscale", "luminance-of-rgb"):
        raise ValueError(f"unknown channel policy {channel_policy!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    parsed = _read_pnm(path)
    arr, peak = parsed if parsed is not None else _read_with_pillow(path)
    if arr.size == 0:
        raise ValueError(f"{path}: zero-sized image")
    if arr.ndim == 3:
        if channel_policy == "grayscale":
            raise ValueError(f"{path}: colour image but channel policy is 'grayscale'")
        arr = arr[..., 0] * BT601[0] + arr[..., 1] * BT601[1] + arr[..., 2] * BT601[2]
    return Image(arr, peak)


def _quantize(img: Image) -> np.ndarray:
    # round-half-up then clamp
    q = np.floor(img.data + 0.5)
    return np.clip(q, 0, img.peak)


def save_image(img: Image, path) -> None:
    """Write ``img`` as 8-bit PGM (``.pgm``) or PNG (``.png``).

    Values are rounded half-up and clamped to ``[0, peak]``.  Images whose
    peak exceeds 255 are stored as 16-bit.
    """
    path = Path(path)
    q = _quantize(img)
    wide = img.peak > 255
    suffix = path.suffix.lower()
    if suffix in (".pgm", ""):
        maxval = int(round(img.peak)) if wide else 255
        body = q.astype(">u2" if wide else np.uint8).tobytes()
        header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body)
    elif suffix == ".png":
        from PIL import Image as PILImage

        arr = q.astype(np.uint16 if wide else np.uint8)
        PILImage.fromarray(arr).save(path)
    else:
        raise ValueError(f"unsupported output format {suffix!r} (use .pgm or .png)")


def gaussian_psf(size: int, sigma: float) -> Psf:
    """Normalised, centred ``size`` x ``size`` Gaussian blur kernel."""
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ValueError(f"PSF size must be a positive odd integer, got {size}")
    if not sigma > 0:
        raise ValueError(f"PSF sigma must be positive, got {sigma}")
    size = int(size)
    c = (size - 1) / 2
    ax = np.arange(size) - c
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return Psf(size, float(sigma), g / g.sum())


def convolve2d(img: Image, kernel, boundary: str = "replicate-edge") -> Image:
    """Same-size 2D convolution (kernel flipped) with the chosen boundary rule."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel side lengths must be odd, got shape {k.shape}")
    try:
        mode = _BOUNDARY_MODES[boundary]
    except KeyError:
        raise ValueError(f"unknown boundary {boundary!r}") from None
    out = ndimage.convolve(img.data, k, mode=mode, cval=0.0)
    return img.with_data(out)


def add_gaussian_noise(img: Image, sigma_n: float, seed: int) -> Image:
    """Add i.i.d. N(0, sigma_n^2) noise.

    Samples come from ``numpy.random.Generator(PCG64(seed))`` via
    ``standard_normal`` in row-major order, so a seed reproduces the same
    bit pattern on any platform running the same NumPy major version.
    """
    if sigma_n < 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma_n}")
    if sigma_n == 0:
        return img.with_data(img.data.copy())
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(img.shape)
    return img.with_data(img.data + sigma_n * noise)


def degrade(img: Image, psf: Psf, sigma_n: float, seed: int, boundary: str = "replicate-edge") -> Image:
    """Blur with ``psf`` then add seeded white Gaussian noise."""
    return add_gaussian_noise(convolve2d(img, psf.taps, boundary), sigma_n, seed)


def write_psf_text(psf: Psf, path) -> None:
    np.savetxt(path, psf.taps, fmt="%.12e")


def corpus_names() -> list[str]:
    """Names of the bundled 256x256 grayscale test images."""
    root = resources.files("aeprnn") / "data"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".pgm"))


def load_corpus_image(name: str) -> Image:
    root = resources.files("aeprnn") / "data"
    with resources.as_file(root / f"{name}.pgm") as p:
        if not os.path.exists(p):
            raise ValueError(f"no bundled image named {name!r}; have {corpus_names()}")
        return load_image(p, "grayscale")
