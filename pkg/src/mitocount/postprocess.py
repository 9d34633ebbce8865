"""Mask post-processing: from binary detector masks to validated figures.

Pipeline per tile: connected-component instance labeling, dilation-based
merging of nearby instances (late-stage mitoses appear as two chromatin
aggregates within 15 um), minimum-area rotated rectangles, and a 3 um
minimum-width filter. A slide-level merge over instance centers then folds
double counts that the tile-local merge cannot see because the aggregates
landed in different detector windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .morphology import binary_dilate
from .units import MicronsPerPixel, Point2, microns_to_pixels

MIN_WIDTH_UM = 3.0
MAX_INTERPOLAR_UM = 15.0


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def label_instances(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label connected foreground regions with dense integer ids.

    Labels are assigned 1..K in raster-scan first-encounter order; background
    stays 0.

    Args:
        mask: 2-D boolean array.
        connectivity: 4 or 8.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {m.shape}")
    labels = np.zeros(m.shape, dtype=np.int32)
    flat_idx = np.flatnonzero(m)  # raster order
    if flat_idx.size == 0:
        return labels

    compact = np.full(m.size, -1, dtype=np.int64)
    compact[flat_idx] = np.arange(flat_idx.size)

    uf = UnionFind(flat_idx.size)

    # Adjacency pairs from shifted views: left, up, and the two diagonals.
    pairs = []
    cm = compact.reshape(m.shape)
    both = m[:, 1:] & m[:, :-1]
    pairs.append((cm[:, 1:][both], cm[:, :-1][both]))
    both = m[1:, :] & m[:-1, :]
    pairs.append((cm[1:, :][both], cm[:-1, :][both]))
    if connectivity == 8:
        both = m[1:, 1:] & m[:-1, :-1]
        pairs.append((cm[1:, 1:][both], cm[:-1, :-1][both]))
        both = m[1:, :-1] & m[:-1, 1:]
        pairs.append((cm[1:, :-1][both], cm[:-1, 1:][both]))

    for a_arr, b_arr in pairs:
        for a, b in zip(a_arr.tolist(), b_arr.tolist()):
            uf.union(a, b)

    next_label = 0
    root_to_label: dict[int, int] = {}
    out = np.zeros(flat_idx.size, dtype=np.int32)
    for i in range(flat_idx.size):
        root = uf.find(i)
        lab = root_to_label.get(root)
        if lab is None:
            next_label += 1
            lab = next_label
            root_to_label[root] = lab
        out[i] = lab
    labels.ravel()[flat_idx] = out
    return labels


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull (Andrew monotone chain), counter-clockwise, no repeats.

    Collinear inputs collapse to their two extreme points; a single point is
    returned as-is.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if pts.shape[0] <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


@dataclass(frozen=True)
class MinRect:
    """Minimum-area enclosing rectangle, possibly rotated.

    ``angle_deg`` is the direction of the ``w`` side, normalized to [0, 90).
    Degenerate inputs give zero-size rectangles (w, h, or both equal 0).
    """

    center: Point2
    w: float
    h: float
    angle_deg: float

    @property
    def long_side(self) -> float:
        return max(self.w, self.h)


def _normalized(w: float, h: float, angle_rad: float, cx: float, cy: float) -> MinRect:
    angle = math.degrees(angle_rad) % 180.0
    if angle >= 90.0:
        angle -= 90.0
        w, h = h, w
    return MinRect(center=Point2(cx, cy), w=w, h=h, angle_deg=angle)


def min_area_rect(contour: np.ndarray) -> MinRect:
    """Minimum-area rectangle enclosing a polygon, via rotating calipers.

    The optimum has a side collinear with a convex-hull edge, so only hull
    edge directions are examined. A single point yields a zero-size rectangle
    at that point; collinear points a zero-width rectangle along the segment.
    """
    pts = np.asarray(contour, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("contour must contain at least one point")
    hull = convex_hull(pts)
    if hull.shape[0] == 1:
        return MinRect(center=Point2(hull[0, 0], hull[0, 1]), w=0.0, h=0.0, angle_deg=0.0)
    if hull.shape[0] == 2:
        d = hull[1] - hull[0]
        length = float(np.hypot(d[0], d[1]))
        c = (hull[0] + hull[1]) / 2.0
        return _normalized(length, 0.0, math.atan2(d[1], d[0]), c[0], c[1])

    best = None
    n = hull.shape[0]
    for i in range(n):
        edge = hull[(i + 1) % n] - hull[i]
        norm = float(np.hypot(edge[0], edge[1]))
        if norm == 0.0:
            continue
        u = edge / norm
        v = np.array([-u[1], u[0]])
        proj_u = hull @ u
        proj_v = hull @ v
        w = float(proj_u.max() - proj_u.min())
        h = float(proj_v.max() - proj_v.min())
        area = w * h
        if best is None or area < best[0]:
            cu = (proj_u.max() + proj_u.min()) / 2.0
            cv = (proj_v.max() + proj_v.min()) / 2.0
            center = cu * u + cv * v
            best = (area, w, h, math.atan2(u[1], u[0]), center)
    assert best is not None
    _, w, h, ang, center = best
    return _normalized(w, h, ang, center[0], center[1])


@dataclass(frozen=True)
class MfInstance:
    """One candidate mitotic figure extracted from a labeled tile mask.

    ``contour`` is the convex outline of the instance's pixel region in tile
    coordinates, built from pixel corner points (pixel (i, j) spans the unit
    square [j, j+1] x [i, i+1]), so an axis-aligned 4x10-pixel block measures
    exactly 4 x 10. ``width_um`` is the longer min-rect side in microns.
    """

    label: int
    pixel_count: int
    contour: np.ndarray
    min_rect: MinRect
    center_fullres: Point2
    width_um: float


def _pixel_corner_points(ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    corners = np.empty((ys.size * 4, 2), dtype=np.float64)
    corners[0::4, 0] = xs
    corners[0::4, 1] = ys
    corners[1::4, 0] = xs + 1
    corners[1::4, 1] = ys
    corners[2::4, 0] = xs
    corners[2::4, 1] = ys + 1
    corners[3::4, 0] = xs + 1
    corners[3::4, 1] = ys + 1
    return corners


def instances_from_labels(
    labels: np.ndarray,
    mpp: MicronsPerPixel,
    tile_offset: tuple[float, float] = (0.0, 0.0),
) -> list[MfInstance]:
    """Extract per-label instances with rotated rectangles and micron widths."""
    lab = np.asarray(labels)
    k = int(lab.max(initial=0))
    ox, oy = tile_offset
    out: list[MfInstance] = []
    for i in range(1, k + 1):
        ys, xs = np.nonzero(lab == i)
        if ys.size == 0:
            continue
        hull = convex_hull(_pixel_corner_points(ys, xs))
        rect = min_area_rect(hull)
        out.append(
            MfInstance(
                label=i,
                pixel_count=int(ys.size),
                contour=hull,
                min_rect=rect,
                center_fullres=Point2(rect.center.x + ox, rect.center.y + oy),
                width_um=rect.long_side * mpp.value,
            )
        )
    return out


def filter_small(
    instances: list[MfInstance],
    mpp: MicronsPerPixel,
    min_width_um: float = MIN_WIDTH_UM,
) -> list[MfInstance]:
    """Keep instances whose min-rect long side is at least ``min_width_um``.

    The threshold is closed (width == min_width_um is kept); order is
    preserved and instances are returned unmodified.
    """
    return [
        inst
        for inst in instances
        if inst.min_rect.long_side * mpp.value >= min_width_um
    ]


def interpolar_dilation_iterations(mpp: MicronsPerPixel, max_interpolar_um: float) -> int:
    """Unit-kernel dilation count growing a mask by half the interpolar distance."""
    return math.ceil(microns_to_pixels(max_interpolar_um / 2.0, mpp))


def merge_interpolar(
    mask: np.ndarray,
    mpp: MicronsPerPixel,
    max_interpolar_um: float = MAX_INTERPOLAR_UM,
    connectivity: int = 8,
) -> np.ndarray:
    """Merge mask instances whose separation is within the interpolar distance.

    The mask is dilated with the unit 3x3 kernel until each side has grown by
    half the interpolar distance, connected components of the *dilated* mask
    are labeled, and each original foreground pixel takes the label of the
    dilated component covering it. Foreground pixels are unchanged and the
    instance count can only decrease. Merged instances may consist of
    spatially separate pixel groups sharing one label.
    """
    m = np.asarray(mask, dtype=bool)
    iterations = interpolar_dilation_iterations(mpp, max_interpolar_um)
    dilated_labels = label_instances(binary_dilate(m, iterations), connectivity)
    out = np.where(m, dilated_labels, 0).astype(np.int32)
    return _relabel_dense(out)


def _relabel_dense(labels: np.ndarray) -> np.ndarray:
    """Renumber labels to 1..K in raster first-encounter order."""
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    out = labels.copy()
    mapping: dict[int, int] = {}
    nxt = 0
    flat_out = out.ravel()
    for i in idx.tolist():
        old = int(flat[i])
        new = mapping.get(old)
        if new is None:
            nxt += 1
            new = nxt
            mapping[old] = new
        flat_out[i] = new
    return out


def merge_global_clusters(
    centers: np.ndarray,
    mpp: MicronsPerPixel,
    max_interpolar_um: float = MAX_INTERPOLAR_UM,
) -> tuple[np.ndarray, list[list[int]]]:
    """Slide-level merge of instance centers within the interpolar distance.

    Pairs of points within ``max_interpolar_um`` (Euclidean, converted to
    pixels) are linked, linked clusters are united transitively, and each
    cluster is replaced by its centroid. Link-and-collapse passes repeat until
    no pair remains in range, which makes the operation idempotent: the
    output points are pairwise farther apart than the merge radius.

    Returns:
        (merged centers as an (M, 2) array, clusters as lists of original
        input indices, ordered by first occurrence).
    """
    from .hpf import KdTree2  # local import to keep module load order flexible

    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2).copy()
    clusters: list[list[int]] = [[i] for i in range(pts.shape[0])]
    r = microns_to_pixels(max_interpolar_um, mpp)
    r2 = r * r
    while pts.shape[0] > 1:
        tree = KdTree2(pts)
        uf = UnionFind(pts.shape[0])
        linked = False
        for i in range(pts.shape[0]):
            x, y = pts[i]
            for j in tree.query_square(x, y, r):
                if j <= i:
                    continue
                dx = pts[j, 0] - x
                dy = pts[j, 1] - y
                if dx * dx + dy * dy <= r2:
                    linked = uf.union(i, j) or linked
        if not linked:
            break
        groups: dict[int, list[int]] = {}
        order: list[int] = []
        for i in range(pts.shape[0]):
            root = uf.find(i)
            if root not in groups:
                groups[root] = []
                order.append(root)
            groups[root].append(i)
        new_pts = np.empty((len(order), 2), dtype=np.float64)
        new_clusters: list[list[int]] = []
        for k, root in enumerate(order):
            members = groups[root]
            new_pts[k] = pts[members].mean(axis=0)
            merged: list[int] = []
            for m_i in members:
                merged.extend(clusters[m_i])
            new_clusters.append(sorted(merged))
        pts = new_pts
        clusters = new_clusters
    return pts, clusters


def merge_global(
    centers: np.ndarray,
    mpp: MicronsPerPixel,
    max_interpolar_um: float = MAX_INTERPOLAR_UM,
) -> np.ndarray:
    """Merged slide-level centers; see merge_global_clusters."""
    merged, _ = merge_global_clusters(centers, mpp, max_interpolar_um)
    return merged
