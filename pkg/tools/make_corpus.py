"""Regenerate the bundled 256x256 luminance test corpus from scikit-image samples.

Run once from the repository root; the output PGMs are committed under
``src/aeprnn/data``.  Requires scikit-image (not a runtime dependency).
"""
from pathlib import Path

import numpy as np
import skimage.data
from skimage.transform import resize

NAMES = ["camera", "astronaut", "coffee", "chelsea", "coins", "moon", "rocket", "brick"]
SIDE = 256
OUT = Path(__file__).resolve().parents[1] / "src" / "aeprnn" / "data"


def luminance(img):
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    return img.astype(np.float64)


def square(img):
    h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top:top + s, left:left + s]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        y = square(luminance(getattr(skimage.data, name)()))
        y = resize(y, (SIDE, SIDE), order=1, anti_aliasing=True, preserve_range=True)
        q = np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)
        with open(OUT / f"{name}.pgm", "wb") as fh:
            fh.write(f"P5\n{SIDE} {SIDE}\n255\n".encode("ascii"))
            fh.write(q.tobytes())
        print(name, q.mean().round(1), q.std().round(1))


if __name__ == "__main__":
    main()
