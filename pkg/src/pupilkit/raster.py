"""Grayscale raster primitives shared by every pipeline stage.

Images are plain 2-D uint8 numpy arrays indexed ``img[y, x]``.  Integral
images carry 64-bit accumulators so rectangle sums never overflow at any
supported resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle with top-left corner (x, y)."""

    x: int
    y: int
    w: int
    h: int

    def clipped(self, width: int, height: int) -> "Rect":
        x0 = min(max(self.x, 0), width)
        y0 = min(max(self.y, 0), height)
        x1 = min(max(self.x + self.w, 0), width)
        y1 = min(max(self.y + self.h, 0), height)
        return Rect(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))

    @property
    def empty(self) -> bool:
        return self.w <= 0 or self.h <= 0


def as_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {img.shape}")
    if img.size == 0:
        raise ValueError("image must contain at least one pixel")
    return img.astype(np.uint8, copy=False)


def load_gray(path) -> np.ndarray:
    """Load an 8-bit grayscale frame (PNG or binary PGM).

    Color inputs are rejected rather than silently converted.
    """
    path = str(path)
    if path.lower().endswith(".pgm"):
        return _load_pgm(path)
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(
                f"{path}: expected 8-bit grayscale input, got mode {im.mode!r}"
            )
        return np.asarray(im, dtype=np.uint8)


def _load_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # Header: magic, width, height, maxval; separated by whitespace/comments.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval={maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()


def save_gray(img: np.ndarray, path) -> None:
    img = as_gray(img)
    path = str(path)
    if path.lower().endswith(".pgm"):
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.tobytes())
    else:
        Image.fromarray(img, mode="L").save(path)


def build_integral(img: np.ndarray) -> np.ndarray:
    """2-D prefix-sum table of shape (H+1, W+1) with zero first row/column."""
    img = as_gray(img)
    ii = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(img, axis=0, dtype=np.int64), axis=1, out=ii[1:, 1:])
    return ii


def rect_sum(ii: np.ndarray, r: Rect, strict: bool = False) -> int:
    """Sum of pixel intensities inside ``r`` in O(1).

    Out-of-bounds rectangles are clamped unless ``strict`` is set, in which
    case they raise.
    """
    height, width = ii.shape[0] - 1, ii.shape[1] - 1
    clipped = r.clipped(width, height)
    if strict and (clipped.x != r.x or clipped.y != r.y
                   or clipped.w != r.w or clipped.h != r.h):
        raise ValueError(f"rect {r} exceeds image bounds {width}x{height}")
    if clipped.empty:
        return 0
    x0, y0 = clipped.x, clipped.y
    x1, y1 = x0 + clipped.w, y0 + clipped.h
    return int(ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0])


def rect_sums(ii: np.ndarray, x0, y0, x1, y1) -> np.ndarray:
    """Vectorised rectangle sums for arrays of corner coordinates."""
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with clamp-to-edge borders."""
    img = as_gray(img)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img
    out = ndimage.gaussian_filter(img.astype(np.float64), sigma, mode="nearest")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def blur_float(img: np.ndarray, sigma: float,
               dtype=np.float64) -> np.ndarray:
    """Gaussian blur in floating point, for gradient work."""
    img = as_gray(img).astype(dtype)
    if sigma <= 0:
        return img
    return ndimage.gaussian_filter(img, sigma, mode="nearest")


def downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean reduction by an integer factor (factor 1 is identity).

    Output dimensions are floor(w/f) x floor(h/f); trailing rows/columns that
    do not fill a block are dropped.  Coordinates map back to the source by
    multiplying by the factor.
    """
    img = as_gray(img)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return img
    h = img.shape[0] // factor
    w = img.shape[1] // factor
    if h < 1 or w < 1:
        return img
    blocks = img[: h * factor, : w * factor].reshape(h, factor, w, factor)
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    return np.clip(np.rint(means), 0, 255).astype(np.uint8)
