"""Exact maximum-count square-region search over mitotic-figure centers.

The counting region is an axis-aligned square of side 2r, i.e. the closed
ball of radius r under the Chebyshev (L-infinity) metric, so finding the
densest placement reduces to fixed-radius range counting. Any optimal square
can be translated until its low-x and low-y edges touch input points, which
bounds the search to centers built from the cartesian product of the points'
distinct x and y coordinates shifted by +r. A balanced k-d tree answers the
per-candidate counts; a per-candidate linear scan provides the brute-force
oracle with identical region semantics and tie-breaking.

Membership on the square boundary is closed (<= r) on all sides, evaluated
as ``abs(coordinate difference) <= r`` in both algorithms so their counts
agree bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .units import HpfGeometry, Point2

_LEAF_SIZE = 16


@dataclass
class _Node:
    lo: int
    hi: int
    bbox: tuple[float, float, float, float]  # minx, maxx, miny, maxy
    left: int = -1
    right: int = -1


class KdTree2:
    """Balanced 2-D k-d tree (median split, alternating axes).

    Points are reordered into contiguous per-subtree slices so that a subtree
    fully inside a query square contributes its size without visiting leaves.
    Duplicate points are retained.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        self._n = pts.shape[0]
        order = np.arange(self._n)
        self._xs = pts[:, 0].copy()
        self._ys = pts[:, 1].copy()
        self._idx = order  # kd position -> original index
        self._nodes: list[_Node] = []
        if self._n:
            self._build(0, self._n, axis=0)

    def __len__(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        """Input points in original order."""
        out = np.empty((self._n, 2))
        out[self._idx, 0] = self._xs
        out[self._idx, 1] = self._ys
        return out

    def _build(self, lo: int, hi: int, axis: int) -> int:
        xs, ys = self._xs, self._ys
        node_id = len(self._nodes)
        bbox = (
            float(xs[lo:hi].min()),
            float(xs[lo:hi].max()),
            float(ys[lo:hi].min()),
            float(ys[lo:hi].max()),
        )
        self._nodes.append(_Node(lo=lo, hi=hi, bbox=bbox))
        if hi - lo > _LEAF_SIZE:
            mid = (lo + hi) // 2
            key = xs[lo:hi] if axis == 0 else ys[lo:hi]
            part = np.argpartition(key, mid - lo)
            for arr in (self._xs, self._ys, self._idx):
                arr[lo:hi] = arr[lo:hi][part]
            node = self._nodes[node_id]
            node.left = self._build(lo, mid, 1 - axis)
            node.right = self._build(mid, hi, 1 - axis)
        return node_id

    @property
    def depth(self) -> int:
        if not self._nodes:
            return 0

        def walk(i: int) -> int:
            node = self._nodes[i]
            if node.left < 0:
                return 1
            return 1 + max(walk(node.left), walk(node.right))

        return walk(0)

    # -- single queries ----------------------------------------------------

    def query_square(self, cx: float, cy: float, r: float) -> np.ndarray:
        """Original indices of all points with chebyshev distance <= r."""
        if r < 0:
            raise ValueError(f"radius must be >= 0, got {r}")
        if not self._n:
            return np.empty(0, dtype=np.int64)
        hits: list[np.ndarray] = []
        stack = [0]
        xs, ys, idx = self._xs, self._ys, self._idx
        while stack:
            node = self._nodes[stack.pop()]
            minx, maxx, miny, maxy = node.bbox
            if minx - cx > r or cx - maxx > r or miny - cy > r or cy - maxy > r:
                continue
            if (
                abs(minx - cx) <= r
                and abs(maxx - cx) <= r
                and abs(miny - cy) <= r
                and abs(maxy - cy) <= r
            ):
                hits.append(idx[node.lo : node.hi])
                continue
            if node.left >= 0:
                stack.append(node.left)
                stack.append(node.right)
                continue
            sl = slice(node.lo, node.hi)
            inside = (np.abs(xs[sl] - cx) <= r) & (np.abs(ys[sl] - cy) <= r)
            hits.append(idx[sl][inside])
        if not hits:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(hits))

    # -- batched counting --------------------------------------------------

    def count_many(self, cx: np.ndarray, cy: np.ndarray, r: float) -> np.ndarray:
        """Counts of points within chebyshev distance r of each query center.

        All queries descend the tree together: at each node the still-active
        candidates are classified (square disjoint from / covering / partially
        overlapping the node's bounding box) with vectorized comparisons, so
        the per-query cost stays sub-linear while the membership arithmetic
        matches the scalar query exactly.
        """
        if r < 0:
            raise ValueError(f"radius must be >= 0, got {r}")
        cx = np.asarray(cx, dtype=np.float64)
        cy = np.asarray(cy, dtype=np.float64)
        counts = np.zeros(cx.shape[0], dtype=np.int64)
        if not self._n or cx.shape[0] == 0:
            return counts
        self._count_node(0, np.arange(cx.shape[0]), cx, cy, r, counts)
        return counts

    def _count_node(
        self,
        node_id: int,
        active: np.ndarray,
        cx: np.ndarray,
        cy: np.ndarray,
        r: float,
        counts: np.ndarray,
    ) -> None:
        node = self._nodes[node_id]
        minx, maxx, miny, maxy = node.bbox
        qx = cx[active]
        qy = cy[active]
        disjoint = (minx - qx > r) | (qx - maxx > r) | (miny - qy > r) | (qy - maxy > r)
        full = (
            (np.abs(minx - qx) <= r)
            & (np.abs(maxx - qx) <= r)
            & (np.abs(miny - qy) <= r)
            & (np.abs(maxy - qy) <= r)
        )
        counts[active[full]] += node.hi - node.lo
        partial = active[~(disjoint | full)]
        if partial.size == 0:
            return
        if node.left >= 0:
            self._count_node(node.left, partial, cx, cy, r, counts)
            self._count_node(node.right, partial, cx, cy, r, counts)
            return
        sl = slice(node.lo, node.hi)
        inside = (np.abs(self._xs[sl][None, :] - cx[partial][:, None]) <= r) & (
            np.abs(self._ys[sl][None, :] - cy[partial][:, None]) <= r
        )
        counts[partial] += inside.sum(axis=1)


def build_kdtree(points: np.ndarray) -> KdTree2:
    """Build a balanced k-d tree over the given points."""
    return KdTree2(points)


def range_count(tree: KdTree2, center: Point2, r: float) -> tuple[int, np.ndarray]:
    """Count and report all points within the closed Chebyshev ball.

    Returns:
        (count, sorted original indices of the members).
    """
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    ids = tree.query_square(center[0], center[1], r)
    return int(ids.size), ids


def candidate_centers(points: np.ndarray, r: float) -> np.ndarray:
    """Candidate square centers: distinct x/y coordinate products shifted by +r.

    An optimal square can be slid until its low-x and low-y edges touch input
    points, so its corner lies on (x_i, y_j) for some points i, j and its
    center at (x_i + r, y_j + r). Coordinates are deduplicated first; the
    result is ordered lexicographically by (x, y).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("candidate centers require at least one point")
    xs = np.unique(pts[:, 0]) + r
    ys = np.unique(pts[:, 1]) + r
    out = np.empty((xs.size * ys.size, 2), dtype=np.float64)
    out[:, 0] = np.repeat(xs, ys.size)
    out[:, 1] = np.tile(ys, xs.size)
    return out


@dataclass(frozen=True)
class HpfRegion:
    """Best-count square region: center, Chebyshev radius, and members.

    ``center`` is None (and count 0) for empty input.
    """

    center: Point2 | None
    radius_px: float
    count: int
    member_ids: list[int] = field(default_factory=list)


def _select_best(counts: np.ndarray, centers: np.ndarray) -> int:
    # Centers are in lexicographic (x, y) order, so the first maximum is the
    # lexicographically smallest tie.
    return int(np.argmax(counts))


def find_best_hpf(points: np.ndarray, geom: HpfGeometry) -> HpfRegion:
    """Max-count square placement via k-d tree range counting.

    Builds the tree, evaluates the count at every candidate center with the
    region's Chebyshev radius, and reports the best region; ties break toward
    the lexicographically smallest (x, y) center. The returned count is
    optimal over all possible square placements, not just the candidates.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r = geom.radius_px
    if pts.shape[0] == 0:
        return HpfRegion(center=None, radius_px=r, count=0)
    tree = KdTree2(pts)
    centers = candidate_centers(pts, r)
    counts = tree.count_many(centers[:, 0], centers[:, 1], r)
    best = _select_best(counts, centers)
    center = Point2(float(centers[best, 0]), float(centers[best, 1]))
    members = tree.query_square(center.x, center.y, r)
    return HpfRegion(
        center=center,
        radius_px=r,
        count=int(counts[best]),
        member_ids=members.tolist(),
    )


def brute_force_best_hpf(points: np.ndarray, geom: HpfGeometry) -> HpfRegion:
    """Oracle search: same candidates, counted by linear scan per candidate.

    Region semantics (closed Chebyshev ball) and tie-breaking are identical
    to find_best_hpf; only the counting path differs.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r = geom.radius_px
    if pts.shape[0] == 0:
        return HpfRegion(center=None, radius_px=r, count=0)
    centers = candidate_centers(pts, r)
    xs = pts[:, 0]
    ys = pts[:, 1]
    counts = np.zeros(centers.shape[0], dtype=np.int64)
    for i in range(centers.shape[0]):
        counts[i] = np.count_nonzero(
            (np.abs(xs - centers[i, 0]) <= r) & (np.abs(ys - centers[i, 1]) <= r)
        )
    best = _select_best(counts, centers)
    cx, cy = float(centers[best, 0]), float(centers[best, 1])
    inside = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    return HpfRegion(
        center=Point2(cx, cy),
        radius_px=r,
        count=int(counts[best]),
        member_ids=np.flatnonzero(inside).tolist(),
    )
