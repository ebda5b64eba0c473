"""One-to-one label assignment between predicted and ground-truth map elements."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (CLASSES, BevExtent, MapInstance, edge_directions,
                       equivalent_orderings, normalize_points)
from .scores import (FocalParams, GcsConfig, combine_scores, focal_cost, gcs_components,
                     gfc)

MAX_BRUTE_FORCE = 8


@dataclass
class CostMatrix:
    """Assignment costs, rows = predictions, columns = ground truths.

    ``ordering`` holds the index into ``equivalent_orderings(gt)`` chosen for
    each entry; ``parts`` keeps the per-entry breakdown for inspection.
    """

    cost: np.ndarray
    ordering: np.ndarray = None
    parts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.cost.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if self.ordering is None:
            self.ordering = np.zeros(self.cost.shape, dtype=int)

    @property
    def shape(self):
        return self.cost.shape


@dataclass
class AssignmentResult:
    pairs: list  # (pred_index, gt_index, ordering_index, cost), sorted by pred_index
    num_preds: int = 0
    num_gts: int = 0

    @property
    def total(self) -> float:
        return math.fsum(c for *_, c in self.pairs)

    @property
    def unmatched_preds(self) -> list:
        matched = {i for i, *_ in self.pairs}
        return [i for i in range(self.num_preds) if i not in matched]

    def as_set(self) -> set:
        return {(i, j) for i, j, *_ in self.pairs}


def _class_probs(preds, probs):
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(preds), len(CLASSES)):
            raise ValueError(f"class probabilities must be ({len(preds)}, {len(CLASSES)})")
        return probs
    # a single-label prediction puts all its mass on its own class
    out = np.zeros((len(preds), len(CLASSES)))
    for i, p in enumerate(preds):
        out[i, p.class_index] = p.score
    return out


def build_cost(preds, gts, cfg: GcsConfig = GcsConfig(), fp: FocalParams = FocalParams(),
               w_cls: float = 2.0, w_pts: float = 4.0, w_dir: float = 0.0,
               extent: BevExtent = BevExtent(), probs=None,
               cls_cost: str = "gfc") -> CostMatrix:
    """Pairwise matching cost between predictions and ground truths.

    Each entry is ``w_cls * gfc(p, s_geo) + w_pts * point_cost`` where the point
    cost is the mean Manhattan distance between normalized points, minimized
    over the ground truth's equivalent orderings, and ``s_geo`` is measured
    against that minimizing ordering. ``p`` is the prediction's probability for
    the ground truth's class.

    Args:
        preds: predicted MapInstances.
        gts: ground-truth MapInstances.
        cfg: which geometry scores make up ``s_geo``.
        fp: focal parameters.
        w_cls: weight of the classification cost.
        w_pts: weight of the point cost.
        w_dir: optional weight of an edge-direction cost ``1 - s_dir``.
        extent: BEV extent used for normalization.
        probs: optional (n_pred, n_classes) class probabilities; defaults to
            each prediction's score on its own class and 0 elsewhere.
        cls_cost: ``"gfc"`` or ``"focal"`` (plain focal cost, ignores geometry).
    """
    if len(gts) and not len(preds):
        raise ValueError("cannot assign ground truths to an empty prediction set")
    if cls_cost not in ("gfc", "focal"):
        raise ValueError(f"unknown classification cost {cls_cost!r}")
    n, m = len(preds), len(gts)
    cost = np.zeros((n, m))
    order = np.zeros((n, m), dtype=int)
    parts = {k: np.zeros((n, m)) for k in ("cls", "pts", "dir", "s_geo")}
    if n == 0 or m == 0:
        return CostMatrix(cost, order, parts)
    p_cls = _class_probs(preds, probs)

    pred_norm = np.stack([normalize_points(p.points, extent) for p in preds])
    for j, gt in enumerate(gts):
        orders = equivalent_orderings(gt.points, gt.closed)
        if orders.shape[1] != pred_norm.shape[1]:
            raise ValueError("predictions and ground truths need the same point count")
        orders_norm = normalize_points(orders.reshape(-1, 2), extent).reshape(orders.shape)
        # (n_pred, n_orderings): mean Manhattan distance per point
        l1 = np.abs(pred_norm[:, None] - orders_norm[None]).sum(axis=-1).mean(axis=-1)
        best = l1.argmin(axis=1)
        for i, pred in enumerate(preds):
            k = int(best[i])
            gt_k = gt.with_points(orders[k])
            comps = gcs_components(pred, gt_k, extent)
            s_geo = combine_scores(comps, cfg)
            p = p_cls[i, gt.class_index]
            c_cls = gfc(p, s_geo, fp) if cls_cost == "gfc" else focal_cost(p, fp)
            c_dir = 1.0 - comps["dir"]
            order[i, j] = k
            parts["cls"][i, j] = c_cls
            parts["pts"][i, j] = l1[i, k]
            parts["dir"][i, j] = c_dir
            parts["s_geo"][i, j] = s_geo
            cost[i, j] = w_cls * c_cls + w_pts * l1[i, k] + w_dir * c_dir
    return CostMatrix(cost, order, parts)


def _check_finite(c: CostMatrix):
    if not np.all(np.isfinite(c.cost)):
        raise ValueError("cost matrix has non-finite entries")


def _result(c: CostMatrix, rows, cols) -> AssignmentResult:
    pairs = sorted((int(i), int(j), int(c.ordering[i, j]), float(c.cost[i, j]))
                   for i, j in zip(rows, cols))
    return AssignmentResult(pairs, *c.shape)


def solve_hungarian(c: CostMatrix) -> AssignmentResult:
    """Minimum-total-cost one-to-one assignment of size ``min(rows, cols)``."""
    if not isinstance(c, CostMatrix):
        c = CostMatrix(c)
    _check_finite(c)
    if 0 in c.shape:
        return AssignmentResult([], *c.shape)
    rows, cols = linear_sum_assignment(c.cost)
    return _result(c, rows, cols)


def brute_force_assign(c: CostMatrix) -> AssignmentResult:
    """Exhaustive assignment; ties go to the lexicographically smallest pair list."""
    if not isinstance(c, CostMatrix):
        c = CostMatrix(c)
    _check_finite(c)
    n, m = c.shape
    k = min(n, m)
    if k > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to min side <= {MAX_BRUTE_FORCE}")
    if k == 0:
        return AssignmentResult([], n, m)
    best = None
    if n <= m:
        candidates = ((range(n), cols) for cols in itertools.permutations(range(m), n))
    else:
        candidates = ((rows, range(m)) for rows in itertools.permutations(range(n), m))
    for rows, cols in candidates:
        pairs = sorted(zip(rows, cols))
        total = math.fsum(c.cost[i, j] for i, j in pairs)
        key = (total, pairs)
        if best is None or key < best:
            best = key
    rows, cols = zip(*best[1])
    return _result(c, rows, cols)


def assign(preds, gts, **kwargs) -> tuple[AssignmentResult, CostMatrix]:
    """Build the cost matrix and solve it; convenience for callers and the CLI."""
    c = build_cost(preds, gts, **kwargs)
    return solve_hungarian(c), c
