"""Binary PPM (P6) image files."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError

_HEADER = re.compile(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Map a 3×H×W array in [-1, 1] to uint8 H×W×3, rounding half to even."""
    scaled = (np.clip(img, -1.0, 1.0) + 1.0) * 127.5
    return np.rint(scaled).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, img: np.ndarray) -> None:
    pixels = to_bytes(np.asarray(img, dtype=np.float64))
    h, w = pixels.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Return uint8 H×W×3 pixels."""
    raw = Path(path).read_bytes()
    m = _HEADER.match(raw)
    if m is None:
        raise FormatError(f"{path}: not a binary PPM")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    body = raw[m.end() :]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def tile(images: np.ndarray, cols: int = 8) -> np.ndarray:
    """Arrange N×3×H×W images into one 3×(rows·H)×(cols·W) grid."""
    n, c, h, w = images.shape
    rows = -(-n // cols)
    grid = np.full((c, rows * h, cols * w), -1.0)
    for i in range(n):
        r, q = divmod(i, cols)
        grid[:, r * h : (r + 1) * h, q * w : (q + 1) * w] = images[i]
    return grid
