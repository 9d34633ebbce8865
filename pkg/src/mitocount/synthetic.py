"""Synthetic whole-slide generator with planted ground truth.

Stands in for scanner output: each slide is a directory of lossless 600x600
RGB tiles plus a low-resolution view, a 224x224 thumbnail, per-tile planted
ground-truth masks, and a JSON manifest. Slides are deterministic for a seed
(byte-identical files on re-generation).

Planted content: dark elliptical figures on a textured tissue background,
sub-threshold specks (max axis < 3 um), and figure pairs at a controlled
boundary gap for exercising the interpolar merge. Non-partner entities are
kept farther apart than twice the merge radius so merges never fire between
unrelated figures, and every blob lies within a single tile (pair partners
may land in different tiles). Pair offsets are axis-aligned so the planted
gap means the same thing to the dilation-based tile merge and the
center-distance slide merge.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, field_validator

from .tissue import DETECTOR_WINDOW_PX
from .units import MicronsPerPixel, microns_to_pixels

THUMBNAIL_PX = 224

# Rendering palette (RGB). Figures must be clearly darker than tissue for the
# thresholding detector stub; tissue must carry chroma spread for the gate.
WHITE_LEVEL = 245
TISSUE_BASE = (231, 183, 206)
FIGURE_BASE = (70, 50, 90)

_PLACEMENT_ATTEMPTS = 200


class PackingError(RuntimeError):
    """Raised when planted figures cannot be placed within bounds."""


class SlideSpec(BaseModel):
    """Generator input for one synthetic slide."""

    slide_id: str = ""
    width_px: int = 1800
    height_px: int = 1800
    mpp: float = 0.5
    seed: int = 0
    blank: bool = False
    n_figures: int = 0
    n_specks: int = 0
    n_pairs: int = 0
    pair_gap_um: float | list[float] = 10.0
    figure_major_um: tuple[float, float] = (5.0, 9.0)
    speck_major_um: tuple[float, float] = (1.2, 2.2)
    pair_major_um: tuple[float, float] = (4.0, 4.4)
    min_separation_um: float = 32.0

    @field_validator("width_px", "height_px")
    @classmethod
    def _positive_dims(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("slide dimensions must be positive")
        return v

    @field_validator("mpp")
    @classmethod
    def _positive_mpp(cls, v: float) -> float:
        if not (v > 0 and math.isfinite(v)):
            raise ValueError("mpp must be finite and positive")
        return v

    @field_validator("n_figures", "n_specks", "n_pairs")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("figure counts must be non-negative")
        return v

    def pair_gaps(self) -> list[float]:
        """Boundary gap per pair; a list is cycled across the pairs."""
        gaps = self.pair_gap_um if isinstance(self.pair_gap_um, list) else [self.pair_gap_um]
        if not gaps:
            raise ValueError("pair_gap_um must not be empty")
        return [gaps[i % len(gaps)] for i in range(self.n_pairs)]


@dataclass(frozen=True)
class PlantedFigure:
    """Ground truth for one rendered blob."""

    figure_id: int
    cx_px: float
    cy_px: float
    major_um: float
    minor_um: float
    angle_deg: float
    is_speck: bool
    pair_partner: int | None = None


@dataclass
class SlideManifest:
    """Metadata and file layout of one synthetic slide.

    All paths are relative to ``base_dir`` so a slide directory can be copied
    (e.g. by the download stage) and re-rooted.
    """

    slide_id: str
    width_px: int
    height_px: int
    mpp: float
    tile_px: int
    nx: int
    ny: int
    lowres_scale: int
    gate_truth: str
    ground_truth: list[PlantedFigure] = field(default_factory=list)
    base_dir: Path = Path(".")

    @property
    def padded_width_px(self) -> int:
        return self.nx * self.tile_px

    @property
    def padded_height_px(self) -> int:
        return self.ny * self.tile_px

    def tile_offsets(self) -> list[tuple[int, int]]:
        return [
            (i * self.tile_px, j * self.tile_px)
            for j in range(self.ny)
            for i in range(self.nx)
        ]

    def tile_name(self, offset: tuple[int, int]) -> str:
        return f"tiles/tile_{offset[0]}_{offset[1]}.png"

    def mask_name(self, offset: tuple[int, int]) -> str:
        return f"masks/mask_{offset[0]}_{offset[1]}.png"

    def load_tile(self, offset: tuple[int, int]) -> np.ndarray:
        return np.asarray(Image.open(self.base_dir / self.tile_name(offset)).convert("RGB"))

    def mask_for_tile(self, offset: tuple[int, int]) -> np.ndarray:
        img = Image.open(self.base_dir / self.mask_name(offset)).convert("L")
        return np.asarray(img) >= 128

    def load_thumbnail(self) -> np.ndarray:
        return np.asarray(Image.open(self.base_dir / "thumbnail.png").convert("RGB"))

    def load_lowres(self) -> np.ndarray:
        return np.asarray(Image.open(self.base_dir / "lowres.png").convert("RGB"))

    def with_base_dir(self, base_dir: Path) -> "SlideManifest":
        return dataclasses.replace(self, base_dir=Path(base_dir))

    def to_json(self) -> str:
        payload = {
            "slide_id": self.slide_id,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "mpp": self.mpp,
            "tile_px": self.tile_px,
            "nx": self.nx,
            "ny": self.ny,
            "lowres_scale": self.lowres_scale,
            "gate_truth": self.gate_truth,
            "ground_truth": [
                {
                    "figure_id": f.figure_id,
                    "cx_px": f.cx_px,
                    "cy_px": f.cy_px,
                    "major_um": f.major_um,
                    "minor_um": f.minor_um,
                    "angle_deg": f.angle_deg,
                    "is_speck": f.is_speck,
                    "pair_partner": f.pair_partner,
                }
                for f in self.ground_truth
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, base_dir: Path) -> "SlideManifest":
        data = json.loads(text)
        figures = [PlantedFigure(**f) for f in data.pop("ground_truth", [])]
        return cls(ground_truth=figures, base_dir=Path(base_dir), **data)


def load_manifest(slide_dir: Path | str) -> SlideManifest:
    """Load a slide manifest from its directory."""
    slide_dir = Path(slide_dir)
    manifest_path = slide_dir / "slide.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no slide manifest at {manifest_path}")
    return SlideManifest.from_json(manifest_path.read_text(), slide_dir)


def _lowres_factor(padded_max_dim: int, tile_px: int) -> int:
    divisors = sorted(d for d in range(1, tile_px + 1) if tile_px % d == 0)
    for d in divisors:
        if padded_max_dim / d <= 640:
            return d
    return tile_px


@dataclass
class _Entity:
    cx: float
    cy: float
    radius_px: float  # bounding radius for separation checks
    major_um: float
    minor_um: float
    angle_deg: float
    is_speck: bool
    partner_slot: int | None = None


def _blob_fits_one_tile(cx: float, cy: float, r: float, tile_px: int) -> bool:
    return (
        int((cx - r) // tile_px) == int((cx + r) // tile_px)
        and int((cy - r) // tile_px) == int((cy + r) // tile_px)
    )


def _separated(entities: list[_Entity], cx, cy, r, min_sep_px, skip: set[int]) -> bool:
    for i, e in enumerate(entities):
        if i in skip:
            continue
        if math.hypot(e.cx - cx, e.cy - cy) < e.radius_px + r + min_sep_px:
            return False
    return True


def _place_entities(spec: SlideSpec, rng: np.random.Generator) -> list[_Entity]:
    mpp = MicronsPerPixel(spec.mpp)
    min_sep_px = microns_to_pixels(spec.min_separation_um, mpp)
    tile = DETECTOR_WINDOW_PX
    entities: list[_Entity] = []

    def sample_blob(major_range, is_speck, skip: set[int]) -> _Entity:
        for _ in range(_PLACEMENT_ATTEMPTS):
            major = float(rng.uniform(*major_range))
            minor = float(rng.uniform(0.6 * major, major))
            angle = float(rng.uniform(0.0, 180.0))
            r = microns_to_pixels(major, mpp) / 2.0 + 2.0
            cx = float(rng.uniform(r + 2, spec.width_px - r - 2))
            cy = float(rng.uniform(r + 2, spec.height_px - r - 2))
            if not _blob_fits_one_tile(cx, cy, r, tile):
                continue
            if not _separated(entities, cx, cy, r, min_sep_px, skip):
                continue
            return _Entity(cx, cy, r, major, minor, angle, is_speck)
        raise PackingError(
            f"could not place a figure after {_PLACEMENT_ATTEMPTS} attempts; "
            f"slide {spec.width_px}x{spec.height_px} px is too crowded"
        )

    for _ in range(spec.n_figures):
        entities.append(sample_blob(spec.figure_major_um, False, skip=set()))
    for _ in range(spec.n_specks):
        entities.append(sample_blob(spec.speck_major_um, True, skip=set()))

    for gap_um in spec.pair_gaps():
        gap_px = microns_to_pixels(gap_um, mpp)
        placed = False
        for _ in range(_PLACEMENT_ATTEMPTS):
            major_a = float(rng.uniform(*spec.pair_major_um))
            major_b = float(rng.uniform(*spec.pair_major_um))
            # Exact half-axes set the planted boundary gap; the +2 px pad is
            # only a safety margin for separation and tile-fit checks.
            ra = microns_to_pixels(major_a, mpp) / 2.0
            rb = microns_to_pixels(major_b, mpp) / 2.0
            d = gap_px + ra + rb  # center-to-center along the pair axis
            axis = rng.integers(0, 2)  # 0: x-aligned, 1: y-aligned
            pair_r = d / 2.0 + max(ra, rb) + 2.0
            pcx = float(rng.uniform(pair_r + 2, spec.width_px - pair_r - 2))
            pcy = float(rng.uniform(pair_r + 2, spec.height_px - pair_r - 2))
            if axis == 0:
                a = (pcx - d / 2.0, pcy)
                b = (pcx + d / 2.0, pcy)
                blob_angle = 0.0  # major axis along the pair axis
            else:
                a = (pcx, pcy - d / 2.0)
                b = (pcx, pcy + d / 2.0)
                blob_angle = 90.0
            if not (
                _blob_fits_one_tile(a[0], a[1], ra + 2.0, tile)
                and _blob_fits_one_tile(b[0], b[1], rb + 2.0, tile)
            ):
                continue
            if not _separated(entities, pcx, pcy, pair_r, min_sep_px, skip=set()):
                continue
            slot_a = len(entities)
            entities.append(
                _Entity(a[0], a[1], ra + 2.0, major_a, 0.6 * major_a, blob_angle, False, slot_a + 1)
            )
            entities.append(
                _Entity(b[0], b[1], rb + 2.0, major_b, 0.6 * major_b, blob_angle, False, slot_a)
            )
            placed = True
            break
        if not placed:
            raise PackingError("could not place a figure pair; slide too crowded")
    return entities


def _render_ellipse_mask(entity: _Entity, mpp: MicronsPerPixel, canvas_shape) -> tuple:
    """Boolean patch of pixels whose centers fall inside the ellipse."""
    ra = microns_to_pixels(entity.major_um, mpp) / 2.0
    rb = microns_to_pixels(entity.minor_um, mpp) / 2.0
    reach = int(math.ceil(max(ra, rb))) + 1
    x0 = max(0, int(entity.cx) - reach)
    y0 = max(0, int(entity.cy) - reach)
    x1 = min(canvas_shape[1], int(entity.cx) + reach + 1)
    y1 = min(canvas_shape[0], int(entity.cy) + reach + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx = (xx + 0.5) - entity.cx
    dy = (yy + 0.5) - entity.cy
    theta = math.radians(entity.angle_deg)
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    mask = (u / ra) ** 2 + (v / rb) ** 2 <= 1.0
    return mask, (y0, y1, x0, x1)


def gen_synthetic_slide(spec: SlideSpec, out_dir: Path | str) -> SlideManifest:
    """Render one synthetic slide into ``out_dir/<slide_id>``.

    Deterministic for a given spec: identical bytes on repeated calls.
    """
    rng = np.random.default_rng(spec.seed)
    mpp = MicronsPerPixel(spec.mpp)
    tile = DETECTOR_WINDOW_PX
    slide_id = spec.slide_id or f"slide-{spec.seed:06d}"
    nx = max(1, math.ceil(spec.width_px / tile))
    ny = max(1, math.ceil(spec.height_px / tile))
    ph, pw = ny * tile, nx * tile

    # Background: white with shared-channel noise (no chroma spread, so blank
    # slides stay below the gate's saturation-variance floor).
    lum_noise = rng.integers(-3, 4, size=(ph, pw), dtype=np.int16)
    canvas = np.clip(WHITE_LEVEL + lum_noise, 0, 255).astype(np.uint8)
    canvas = np.repeat(canvas[:, :, None], 3, axis=2)

    entities: list[_Entity] = []
    if not spec.blank:
        # Tissue texture over the whole canvas: per-channel coarse mottling
        # (chroma spread for the gate) plus fine shared noise.
        block = 30
        gh, gw = ph // block + 1, pw // block + 1
        tissue = np.empty((ph, pw, 3), dtype=np.float64)
        for c, base in enumerate(TISSUE_BASE):
            coarse = rng.uniform(-9, 9, size=(gh, gw))
            mottle = np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:ph, :pw]
            tissue[:, :, c] = base + mottle
        tissue += rng.uniform(-4, 4, size=(ph, pw))[:, :, None]
        canvas = np.clip(tissue, 0, 255).astype(np.uint8)

        entities = _place_entities(spec, rng)

    gt_mask = np.zeros((ph, pw), dtype=bool)
    for entity in entities:
        patch, (y0, y1, x0, x1) = _render_ellipse_mask(entity, mpp, (ph, pw))
        shade = rng.uniform(-6, 6)
        for c, base in enumerate(FIGURE_BASE):
            region = canvas[y0:y1, x0:x1, c]
            region[patch] = np.clip(base + shade, 0, 255)
        gt_mask[y0:y1, x0:x1] |= patch

    figures = [
        PlantedFigure(
            figure_id=i,
            cx_px=e.cx,
            cy_px=e.cy,
            major_um=e.major_um,
            minor_um=e.minor_um,
            angle_deg=e.angle_deg,
            is_speck=e.is_speck,
            pair_partner=e.partner_slot,
        )
        for i, e in enumerate(entities)
    ]

    factor = _lowres_factor(max(pw, ph), tile)
    lowres = (
        canvas.reshape(ph // factor, factor, pw // factor, factor, 3)
        .mean(axis=(1, 3))
        .round()
        .astype(np.uint8)
    )

    slide_dir = Path(out_dir) / slide_id
    (slide_dir / "tiles").mkdir(parents=True, exist_ok=True)
    (slide_dir / "masks").mkdir(parents=True, exist_ok=True)

    manifest = SlideManifest(
        slide_id=slide_id,
        width_px=spec.width_px,
        height_px=spec.height_px,
        mpp=spec.mpp,
        tile_px=tile,
        nx=nx,
        ny=ny,
        lowres_scale=factor,
        gate_truth="no-count" if spec.blank else "count",
        ground_truth=figures,
        base_dir=slide_dir,
    )

    for x0, y0 in manifest.tile_offsets():
        tile_img = canvas[y0 : y0 + tile, x0 : x0 + tile]
        Image.fromarray(tile_img).save(slide_dir / manifest.tile_name((x0, y0)))
        mask_img = (gt_mask[y0 : y0 + tile, x0 : x0 + tile] * np.uint8(255))
        Image.fromarray(mask_img, mode="L").save(slide_dir / manifest.mask_name((x0, y0)))

    Image.fromarray(lowres).save(slide_dir / "lowres.png")
    thumb = Image.fromarray(lowres).resize((THUMBNAIL_PX, THUMBNAIL_PX), Image.BILINEAR)
    thumb.save(slide_dir / "thumbnail.png")
    (slide_dir / "slide.json").write_text(manifest.to_json())
    return manifest
