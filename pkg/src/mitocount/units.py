"""Physical units and planar geometry shared across the toolkit.

Everything downstream works in full-resolution pixel coordinates; physical
thresholds (microns) are converted exactly once per slide through the scan's
microns-per-pixel value. Pixel quantities stay real-valued here; rounding
happens only at raster operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

# Standard reporting area for ten high-power fields, in mm^2.
HPF_AREA_MM2 = 2.37


class Point2(NamedTuple):
    """A 2-D point in pixel coordinates."""

    x: float
    y: float


@dataclass(frozen=True)
class MicronsPerPixel:
    """Physical scan resolution in micrometers per pixel at full resolution."""

    value: float

    def __post_init__(self) -> None:
        if not (isinstance(self.value, (int, float)) and math.isfinite(self.value)):
            raise ValueError(f"microns-per-pixel must be finite, got {self.value!r}")
        if self.value <= 0:
            raise ValueError(f"microns-per-pixel must be > 0, got {self.value}")


@dataclass(frozen=True)
class HpfGeometry:
    """Pixel-space geometry of the square 2.37 mm^2 counting region.

    Attributes:
        area_mm2: physical area of the region (constant 2.37).
        side_px: side length of the square in full-resolution pixels.
        radius_px: half the side; the Chebyshev radius of the region.
    """

    area_mm2: float
    side_px: float
    radius_px: float


def microns_to_pixels(um: float, mpp: MicronsPerPixel) -> float:
    """Convert a length in micrometers to full-resolution pixels."""
    if not math.isfinite(um):
        raise ValueError(f"length must be finite, got {um!r}")
    if um < 0:
        raise ValueError(f"length must be >= 0, got {um}")
    return um / mpp.value


def hpf_geometry(mpp: MicronsPerPixel) -> HpfGeometry:
    """Pixel geometry of the 2.37 mm^2 square at the given scan resolution."""
    side_um = math.sqrt(HPF_AREA_MM2 * 1e6)  # mm^2 -> um^2 under the sqrt
    side_px = side_um / mpp.value
    return HpfGeometry(area_mm2=HPF_AREA_MM2, side_px=side_px, radius_px=side_px / 2.0)


def chebyshev(p1: Point2, p2: Point2) -> float:
    """L-infinity distance: max of absolute per-axis differences.

    The closed ball of radius r under this metric is the axis-aligned square
    of side 2r, which is what makes square-region counting a fixed-radius
    neighbor query.
    """
    x1, y1 = p1
    x2, y2 = p2
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise ValueError("points must have finite coordinates")
    return max(abs(x1 - x2), abs(y1 - y2))
