"""Binary morphology with the 3x3 square structuring element.

Dilation treats out-of-bounds pixels as background and erosion treats them
as foreground (the adjunct convention), so closing is a proper algebraic
closing on the finite grid: idempotent, extensive, and increasing.
"""

from __future__ import annotations

import numpy as np


def _dilate_once(mask: np.ndarray) -> np.ndarray:
    # 3x3 square dilation, separable into a 1x3 and a 3x1 pass.
    h = mask.copy()
    h[:, 1:] |= mask[:, :-1]
    h[:, :-1] |= mask[:, 1:]
    out = h.copy()
    out[1:, :] |= h[:-1, :]
    out[:-1, :] |= h[1:, :]
    return out


def binary_dilate(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Dilate a boolean mask by the 3x3 square element, repeatedly."""
    out = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        out = _dilate_once(out)
    return out


def binary_erode(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Erode a boolean mask by the 3x3 square element, repeatedly."""
    return ~binary_dilate(~np.asarray(mask, dtype=bool), iterations)


def binary_close(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Morphological closing: dilate then erode with matched iterations."""
    return binary_erode(binary_dilate(mask, iterations), iterations)


def box_mean(values: np.ndarray, size: int = 3) -> np.ndarray:
    """Mean over a size x size window, normalized by in-bounds coverage.

    Coverage normalization keeps edge pixels unbiased: an all-ones field
    stays all ones after blurring.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"box size must be odd and >= 1, got {size}")
    arr = np.asarray(values, dtype=np.float64)
    half = size // 2
    padded = np.zeros((arr.shape[0] + 2 * half + 1, arr.shape[1] + 2 * half + 1))
    padded[half + 1 :, half + 1 :] = arr
    integ = padded.cumsum(axis=0).cumsum(axis=1)

    def window_sum(img: np.ndarray) -> np.ndarray:
        return (
            img[size:, size:]
            - img[:-size, size:]
            - img[size:, :-size]
            + img[:-size, :-size]
        )

    sums = window_sum(integ)
    ones = np.zeros_like(padded)
    ones[half + 1 :, half + 1 :] = 1.0
    counts = window_sum(ones.cumsum(axis=0).cumsum(axis=1))
    return sums / counts
