"""Geometric primitives for vectorized map elements.

Points are always ``(N, 2)`` float arrays in the ego frame (meters) unless a
function says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASSES = ("pedestrian_crossing", "lane_divider", "road_boundary")


@dataclass
class MapInstance:
    class_id: str
    points: np.ndarray
    closed: bool = False
    score: float = 1.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.class_id not in CLASSES:
            raise ValueError(f"unknown map class {self.class_id!r}")
        if len(self.points) < 2:
            raise ValueError("a map instance needs at least 2 points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("instance points must be finite")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        self.score = float(self.score)
        self.closed = bool(self.closed)

    @property
    def class_index(self) -> int:
        return CLASSES.index(self.class_id)

    def with_points(self, points) -> "MapInstance":
        return MapInstance(self.class_id, points, self.closed, self.score)


@dataclass(frozen=True)
class BevExtent:
    x_min: float = -15.0
    x_max: float = 15.0
    y_min: float = -30.0
    y_max: float = 30.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate extent {self}")

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min])

    @property
    def size(self) -> np.ndarray:
        return np.array([self.x_max - self.x_min, self.y_max - self.y_min])

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}


@dataclass(frozen=True)
class Box2D:
    lo: tuple = field(default=(0.0, 0.0))
    hi: tuple = field(default=(0.0, 0.0))

    def __post_init__(self):
        if self.lo[0] > self.hi[0] or self.lo[1] > self.hi[1]:
            raise ValueError(f"box corners out of order: {self.lo} > {self.hi}")

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])


def _points(x) -> np.ndarray:
    if isinstance(x, MapInstance):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 2)


def normalize_points(points, extent: BevExtent = BevExtent()) -> np.ndarray:
    """Map metric coordinates affinely onto ``[0, 1]^2``, clamping outliers."""
    pts = _points(points)
    return np.clip((pts - extent.lo) / extent.size, 0.0, 1.0)


def denormalize_points(points, extent: BevExtent = BevExtent()) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) * extent.size + extent.lo


def chamfer_distance(a, b) -> float:
    """Symmetric chamfer distance: mean of the two directed mean-min distances.

    Args:
        a: first point set, shape (N, 2).
        b: second point set, shape (M, 2).

    Returns:
        float: distance in the units of the inputs.
    """
    a, b = _points(a), _points(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def chamfer_matrix(sets_a, sets_b) -> np.ndarray:
    """Pairwise chamfer distances between two lists of equally sized point sets."""
    if len(sets_a) == 0 or len(sets_b) == 0:
        return np.zeros((len(sets_a), len(sets_b)))
    a = np.stack([_points(s) for s in sets_a])
    b = np.stack([_points(s) for s in sets_b])
    d = np.linalg.norm(a[:, None, :, None, :] - b[None, :, None, :, :], axis=-1)
    return 0.5 * (d.min(axis=3).mean(axis=2) + d.min(axis=2).mean(axis=2))


def edge_directions(points, closed: bool = False, return_degenerate: bool = False):
    """Unit direction of every edge, including the wraparound edge when closed.

    Zero-length edges come back as zero vectors; pass ``return_degenerate`` to
    also get the boolean mask of those edges.
    """
    if isinstance(points, MapInstance):
        closed = points.closed
    pts = _points(points)
    nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
    cur = pts if closed else pts[:-1]
    vec = nxt - cur
    norm = np.linalg.norm(vec, axis=1)
    degenerate = norm == 0.0
    unit = np.zeros_like(vec)
    unit[~degenerate] = vec[~degenerate] / norm[~degenerate, None]
    if return_degenerate:
        return unit, degenerate
    return unit


def enclosing_box(points) -> Box2D:
    pts = _points(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return Box2D((float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])))


def giou(a: Box2D, b: Box2D) -> float:
    """Generalized IoU of two axis-aligned boxes; zero-area boxes are allowed."""
    iw = max(0.0, min(a.hi[0], b.hi[0]) - max(a.lo[0], b.lo[0]))
    ih = max(0.0, min(a.hi[1], b.hi[1]) - max(a.lo[1], b.lo[1]))
    inter = iw * ih
    union = a.area + b.area - inter
    hull = ((max(a.hi[0], b.hi[0]) - min(a.lo[0], b.lo[0]))
            * (max(a.hi[1], b.hi[1]) - min(a.lo[1], b.lo[1])))
    if union <= 0.0:
        # both boxes have zero area: only coincidence counts as overlap
        return 1.0 if a == b else 0.0
    iou = inter / union
    if hull <= 0.0:
        return iou
    return iou - (hull - union) / hull


def equivalent_orderings(points, closed: bool = False) -> np.ndarray:
    """All point orderings describing the same element.

    Open polylines give ``[forward, reversed]``. Closed polygons give every
    cyclic shift of the forward order followed by every cyclic shift of the
    reversed order, ``2 * N`` orderings in total.

    Returns:
        np.ndarray: shape (K, N, 2).
    """
    if isinstance(points, MapInstance):
        closed = points.closed
    pts = _points(points)
    rev = pts[::-1]
    if not closed:
        return np.stack([pts, rev])
    n = len(pts)
    fwd = [np.roll(pts, -s, axis=0) for s in range(n)]
    bwd = [np.roll(rev, -s, axis=0) for s in range(n)]
    return np.stack(fwd + bwd)
