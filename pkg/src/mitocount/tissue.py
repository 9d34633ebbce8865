"""Coarse tissue detection on a low-resolution slide view.

The slide background is bright (back-lit scanner), so foreground tissue is
separated by thresholding the CIELAB lightness channel with Otsu's method,
then cleaned up morphologically. The resulting mask drives the tile layout
for the detector: non-overlapping windows, padded at the right/bottom edges
so the window count divides the slide exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .morphology import binary_close, box_mean

DETECTOR_WINDOW_PX = 600


class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool


@dataclass(frozen=True)
class TileGrid:
    """Full-resolution detector tile layout derived from a tissue mask.

    Attributes:
        window_px: tile side length; tiles are non-overlapping.
        tiles: (x0, y0) full-resolution offsets of tissue-bearing tiles,
            each offset a multiple of window_px, in raster order.
        scale: low-res -> full-res magnification factor of the source mask.
        nx, ny: grid dimensions covering the padded slide.
    """

    window_px: int
    tiles: list[tuple[int, int]] = field(default_factory=list)
    scale: float = 1.0
    nx: int = 1
    ny: int = 1


def rgb_to_lab_l(rgb: np.ndarray) -> np.ndarray:
    """Extract the CIELAB L* channel of an 8-bit sRGB image, scaled to [0, 255].

    Uses the standard sRGB linearization and D65 white point; pure white maps
    to 255 and pure black to 0.

    Args:
        rgb: array of shape (H, W, 3), dtype uint8.

    Returns:
        uint8 array of shape (H, W).
    """
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.size == 0:
        raise ValueError(f"expected a non-empty (H, W, 3) RGB image, got shape {arr.shape}")
    c = arr.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    y = lin[..., 0] * 0.2126 + lin[..., 1] * 0.7152 + lin[..., 2] * 0.0722
    delta = 6.0 / 29.0
    fy = np.where(y > delta**3, np.cbrt(y), y / (3 * delta * delta) + 4.0 / 29.0)
    l_star = 116.0 * fy - 16.0
    return np.clip(np.rint(l_star * 255.0 / 100.0), 0, 255).astype(np.uint8)


def histogram256(gray: np.ndarray) -> np.ndarray:
    """256-bin intensity histogram of an 8-bit image."""
    return np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256)


def otsu_threshold(histogram: np.ndarray) -> OtsuResult:
    """Threshold maximizing between-class variance over splits {<=t} vs {>t}.

    The maximization is carried out in exact integer arithmetic (the variance
    is rational in the bin counts), so ties are broken deterministically by
    the smallest t regardless of floating-point rounding.

    Args:
        histogram: 256 bins of non-negative counts.

    Returns:
        OtsuResult with the winning threshold; ``degenerate`` is set when the
        histogram has a single occupied bin (single-class input).
    """
    hist = np.asarray(histogram, dtype=np.int64)
    if hist.shape != (256,):
        raise ValueError(f"histogram must have 256 bins, got shape {hist.shape}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    nonzero = np.flatnonzero(hist)
    if nonzero.size == 0:
        raise ValueError("histogram is empty")
    if nonzero.size == 1:
        return OtsuResult(int(nonzero[0]), True)

    counts = [int(v) for v in hist]
    total = sum(counts)
    total_sum = sum(i * v for i, v in enumerate(counts))

    best_t = 0
    best_num = -1  # numerator (S0*T - S*w0)^2, exact int
    best_den = 1  # denominator w0*w1, exact int
    w0 = 0
    s0 = 0
    for t in range(256):
        w0 += counts[t]
        s0 += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        num = (s0 * total - total_sum * w0) ** 2
        den = w0 * w1
        # Compare num/den > best_num/best_den by cross-multiplication.
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t
    return OtsuResult(best_t, False)


def refine_mask(mask: np.ndarray, iterations: int = 2, blur_size: int = 3) -> np.ndarray:
    """Clean a binary tissue mask: morphological closing, then blur + re-threshold.

    Closing (3x3 square element, ``iterations`` each way) fills pinholes along
    tissue boundaries; the box blur of the binary field re-thresholded at 0.5
    removes isolated speckle noise.
    """
    m = np.asarray(mask, dtype=bool)
    closed = binary_close(m, iterations)
    return box_mean(closed.astype(np.float64), blur_size) >= 0.5


def tissue_tiles(
    mask: np.ndarray,
    slide_width_px: int,
    slide_height_px: int,
    window_px: int = DETECTOR_WINDOW_PX,
    min_coverage: float = 0.05,
) -> TileGrid:
    """Detector tile offsets for every window with enough tissue coverage.

    The low-resolution mask is mapped onto the full-resolution tile grid (one
    mask-pixel block per window) and each tile's tissue fraction computed; a
    tile is emitted when the fraction reaches ``min_coverage``. The grid pads
    the right/bottom edges so the window count is whole in both axes; a slide
    smaller than one window yields a single padded tile.

    Coverage is monotone in the mask: setting additional mask pixels can only
    add tiles, never remove them.
    """
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {m.shape}")
    if slide_width_px <= 0 or slide_height_px <= 0:
        raise ValueError("slide dimensions must be positive")

    nx = max(1, math.ceil(slide_width_px / window_px))
    ny = max(1, math.ceil(slide_height_px / window_px))
    mh, mw = m.shape
    scale_x = slide_width_px / mw
    scale_y = slide_height_px / mh

    # Map each low-res pixel (by its center) to the tile containing it.
    ix = (((np.arange(mw) + 0.5) * scale_x) // window_px).astype(np.int64).clip(0, nx - 1)
    iy = (((np.arange(mh) + 0.5) * scale_y) // window_px).astype(np.int64).clip(0, ny - 1)
    flat = (iy[:, None] * nx + ix[None, :]).ravel()
    tissue = np.bincount(flat, weights=m.ravel().astype(np.float64), minlength=nx * ny)
    totals = np.bincount(flat, minlength=nx * ny)

    tiles: list[tuple[int, int]] = []
    for j in range(ny):
        for i in range(nx):
            k = j * nx + i
            if totals[k] > 0 and tissue[k] / totals[k] >= min_coverage:
                tiles.append((i * window_px, j * window_px))
    return TileGrid(window_px=window_px, tiles=tiles, scale=scale_x, nx=nx, ny=ny)
