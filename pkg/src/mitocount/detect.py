"""Pluggable slide gate and tile detectors, with deterministic stubs.

The gate decides per slide whether counting applies at all; the detector
turns 600x600 tiles into per-pixel probability masks. Both are interfaces so
the pipeline stays agnostic of the model backing them. The stubs supplied
here are deterministic: a heuristic gate driven by tissue statistics, a
passthrough gate/detector that replays the synthetic slide's planted ground
truth, a blob detector thresholding dark-stained figures, and a noise
detector that plants seeded false-positive specks for filter testing.

All stubs are stateless and safe for concurrent invocation from multiple
inference workers.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tissue import histogram256, otsu_threshold, refine_mask, rgb_to_lab_l

THUMBNAIL_PX = 224
MAX_BATCH = 16

# Heuristic gate floors: minimum stained-tissue fraction and minimum
# saturation variance below which a slide is treated as blank.
GATE_MIN_TISSUE_FRACTION = 0.02
GATE_MIN_SATURATION_VAR = 1e-4


class GateLabel(Enum):
    COUNT = "count"
    NO_COUNT = "no-count"


@dataclass(frozen=True)
class GateDecision:
    label: GateLabel
    score: float


@dataclass(frozen=True)
class TileBatch:
    """A stack of detector input tiles with their full-resolution offsets.

    ``tiles`` has shape [batch, channels=3, height, width] with batch <= 16.
    """

    tiles: np.ndarray
    offsets: list[tuple[int, int]]

    def __post_init__(self) -> None:
        t = self.tiles
        if t.ndim != 4 or t.shape[1] != 3:
            raise ValueError(f"tiles must be [batch, 3, h, w], got shape {t.shape}")
        if t.shape[0] > MAX_BATCH:
            raise ValueError(f"batch size {t.shape[0]} exceeds maximum {MAX_BATCH}")
        if len(self.offsets) != t.shape[0]:
            raise ValueError("offsets length must equal batch size")

    def __len__(self) -> int:
        return self.tiles.shape[0]

    def tile_rgb(self, i: int) -> np.ndarray:
        """Tile i as an (H, W, 3) uint8 image."""
        return np.moveaxis(self.tiles[i], 0, -1)


def _saturation_variance(rgb: np.ndarray) -> float:
    c = rgb.astype(np.float64) / 255.0
    mx = c.max(axis=2)
    mn = c.min(axis=2)
    sat = np.where(mx > 0, (mx - mn) / np.maximum(mx, 1e-12), 0.0)
    return float(sat.var())


class HeuristicGate:
    """Count/no-count decision from thumbnail tissue statistics.

    Tissue fraction is the share of pixels darker than the Otsu threshold of
    the L channel; blank or near-blank slides are caught either by that
    fraction or by a near-zero saturation variance (white-light background
    has no color spread).
    """

    name = "heuristic"

    def classify(self, thumbnail: np.ndarray, gate_truth: str | None = None) -> GateDecision:
        thumb = _check_thumbnail(thumbnail)
        lum = rgb_to_lab_l(thumb)
        otsu = otsu_threshold(histogram256(lum))
        if otsu.degenerate:
            fraction = 0.0
        else:
            fraction = float(np.count_nonzero(lum <= otsu.threshold)) / lum.size
        if _saturation_variance(thumb) < GATE_MIN_SATURATION_VAR:
            return GateDecision(GateLabel.NO_COUNT, min(max(fraction, 0.0), 1.0))
        if fraction < GATE_MIN_TISSUE_FRACTION:
            return GateDecision(GateLabel.NO_COUNT, min(max(fraction, 0.0), 1.0))
        return GateDecision(GateLabel.COUNT, min(max(fraction, 0.0), 1.0))


class PassthroughGate:
    """Replays the gate truth recorded in a synthetic slide manifest."""

    name = "passthrough"

    def classify(self, thumbnail: np.ndarray, gate_truth: str | None = None) -> GateDecision:
        _check_thumbnail(thumbnail)
        if gate_truth is None:
            raise ValueError("passthrough gate requires a manifest gate_truth")
        label = GateLabel(gate_truth)
        return GateDecision(label, 1.0 if label is GateLabel.COUNT else 0.0)


def _check_thumbnail(thumbnail: np.ndarray) -> np.ndarray:
    thumb = np.asarray(thumbnail)
    if thumb.shape != (THUMBNAIL_PX, THUMBNAIL_PX, 3):
        raise ValueError(
            f"thumbnail must be {THUMBNAIL_PX}x{THUMBNAIL_PX} RGB, got shape {thumb.shape}"
        )
    return thumb


def gate_classify(thumbnail: np.ndarray) -> GateDecision:
    """Heuristic count/no-count decision for a 224x224 thumbnail."""
    return HeuristicGate().classify(thumbnail)


class DetectorImpl:
    """Tile-in/mask-out detector interface: no inter-tile state allowed."""

    name = "detector"
    concurrent_safe = True

    def detect(self, batch: TileBatch, slide) -> list[np.ndarray]:
        raise NotImplementedError


class PassthroughDetector(DetectorImpl):
    """Replays the planted ground-truth mask of each tile from the manifest."""

    name = "passthrough"

    def detect(self, batch: TileBatch, slide) -> list[np.ndarray]:
        return [slide.mask_for_tile(off).astype(np.float64) for off in batch.offsets]


# Reject blob thresholds that would flood the tile; stained figures occupy a
# tiny fraction of any real tile, so a large dark fraction means the split
# landed between tissue and background instead.
BLOB_MAX_FOREGROUND_FRACTION = 0.2


class BlobDetector(DetectorImpl):
    """Thresholds dark-stained elliptical blobs in a tile.

    Pixels strictly darker than the tile's Otsu threshold are kept, then the
    mask is refined morphologically. Near-unimodal tiles (degenerate Otsu or
    an implausibly large dark fraction) yield an empty mask.
    """

    name = "blob"

    def detect(self, batch: TileBatch, slide) -> list[np.ndarray]:
        out = []
        for i in range(len(batch)):
            lum = rgb_to_lab_l(batch.tile_rgb(i))
            otsu = otsu_threshold(histogram256(lum))
            if otsu.degenerate:
                out.append(np.zeros(lum.shape, dtype=np.float64))
                continue
            mask = lum < otsu.threshold
            if mask.mean() > BLOB_MAX_FOREGROUND_FRACTION:
                out.append(np.zeros(lum.shape, dtype=np.float64))
                continue
            out.append(refine_mask(mask).astype(np.float64))
        return out


class NoiseDetector(DetectorImpl):
    """Passthrough plus seeded false-positive specks for filter testing.

    Speck placement is derived from (seed, slide id, tile offset), so results
    are identical regardless of batching or worker scheduling. Specks are
    2x2-pixel squares placed clear of existing mask and of each other, so the
    pre-filter component count is exactly planted + specks.
    """

    name = "noise"

    def __init__(self, seed: int = 0, specks: int = 3):
        self.seed = seed
        self.specks = specks
        self._inner = PassthroughDetector()

    def detect(self, batch: TileBatch, slide) -> list[np.ndarray]:
        masks = self._inner.detect(batch, slide)
        out = []
        for mask, offset in zip(masks, batch.offsets):
            m = mask.copy()
            rng = np.random.default_rng(
                (self.seed, zlib.crc32(str(slide.slide_id).encode()), offset[0], offset[1])
            )
            placed = 0
            guard = 0
            h, w = m.shape
            occupied = m > 0
            while placed < self.specks and guard < 1000:
                guard += 1
                y = int(rng.integers(2, h - 4))
                x = int(rng.integers(2, w - 4))
                neighborhood = occupied[y - 2 : y + 4, x - 2 : x + 4]
                if neighborhood.any():
                    continue
                m[y : y + 2, x : x + 2] = 1.0
                occupied[y : y + 2, x : x + 2] = True
                placed += 1
            out.append(m)
        return out


class EnsembleDetector(DetectorImpl):
    """Averages the probability masks of member detectors."""

    name = "ensemble"

    def __init__(self, members: list[DetectorImpl]):
        if not members:
            raise ValueError("ensemble requires at least one member")
        self.members = members

    def detect(self, batch: TileBatch, slide) -> list[np.ndarray]:
        per_member = [m.detect(batch, slide) for m in self.members]
        return [
            np.mean([masks[i] for masks in per_member], axis=0)
            for i in range(len(batch))
        ]


class DetectorConfigError(ValueError):
    """Raised when a detector id or its parameters are invalid."""


def build_detector(detector_id: str, params: dict | None = None) -> DetectorImpl:
    """Instantiate a detector stub from its config id and parameters."""
    params = dict(params or {})
    if detector_id == "passthrough":
        return PassthroughDetector()
    if detector_id == "blob":
        return BlobDetector()
    if detector_id == "noise":
        return NoiseDetector(seed=int(params.get("seed", 0)), specks=int(params.get("specks", 3)))
    if detector_id == "ensemble":
        member_ids = params.get("members")
        if not member_ids:
            raise DetectorConfigError("ensemble detector requires a 'members' list")
        return EnsembleDetector([build_detector(m) for m in member_ids])
    raise DetectorConfigError(f"unknown detector id {detector_id!r}")


def build_gate(gate_id: str):
    """Instantiate a gate stub from its config id."""
    if gate_id == "heuristic":
        return HeuristicGate()
    if gate_id == "passthrough":
        return PassthroughGate()
    raise DetectorConfigError(f"unknown gate id {gate_id!r}")


def detect_tile_batch(batch: TileBatch, detector: DetectorImpl, slide=None) -> list[np.ndarray]:
    """Run a detector over a batch, validating one in-range mask per tile."""
    masks = detector.detect(batch, slide)
    if len(masks) != len(batch):
        raise ValueError(
            f"detector {detector.name!r} returned {len(masks)} masks for {len(batch)} tiles"
        )
    for mask in masks:
        if mask.shape != batch.tiles.shape[2:]:
            raise ValueError(
                f"mask shape {mask.shape} does not match tile shape {batch.tiles.shape[2:]}"
            )
        if mask.size and (mask.min() < 0.0 or mask.max() > 1.0):
            raise ValueError("probability mask values must lie in [0, 1]")
    return masks


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability mask; a bit is set iff value >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(mask, dtype=np.float64) >= threshold
