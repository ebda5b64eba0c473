"""Chamfer-threshold average precision for vectorized map predictions."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import CLASSES, BevExtent, chamfer_matrix


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple = (0.5, 1.0, 1.5)
    classes: tuple = CLASSES
    extent: BevExtent = BevExtent()
    score_floor: float = 0.0

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        if not t or any(x <= 0 for x in t) or list(t) != sorted(t):
            raise ValueError("thresholds must be positive and ascending")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "classes", tuple(self.classes))


@dataclass
class EvalReport:
    ap: dict            # class -> {threshold: AP or None}
    class_ap: dict      # class -> mean AP over thresholds, or None if no data
    mAP: float
    pr_curves: dict = field(default_factory=dict)  # class -> {threshold: [(recall, precision)]}

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "class_ap": self.class_ap,
            "ap": {c: {f"{t:g}": v for t, v in d.items()} for c, d in self.ap.items()},
        }

    def pr_rows(self):
        for c, by_t in self.pr_curves.items():
            for t, curve in by_t.items():
                for r, p in curve:
                    yield c, t, r, p


def match_frame(preds, gts, tau: float):
    """Greedy score-ordered matching of one class in one frame.

    Predictions are visited by descending score (ties by index); each takes the
    nearest still-unmatched ground truth if its chamfer distance is below
    ``tau``.

    Returns:
        np.ndarray: boolean TP flag per prediction, in input order.
    """
    tp = np.zeros(len(preds), dtype=bool)
    if not preds or not gts:
        return tp
    dist = chamfer_matrix([p.points for p in preds], [g.points for g in gts])
    return _greedy(dist, np.array([p.score for p in preds]), tau)


def _greedy(dist, scores, tau):
    tp = np.zeros(len(scores), dtype=bool)
    taken = np.zeros(dist.shape[1], dtype=bool)
    for i in np.argsort(-scores, kind="stable"):
        d = np.where(taken, np.inf, dist[i])
        j = int(np.argmin(d))
        if d[j] < tau:
            tp[i] = True
            taken[j] = True
    return tp


def average_precision(scores, flags, num_gt: int, return_curve: bool = False):
    """All-point interpolated AP over predictions pooled across frames.

    Returns ``None`` when there are neither ground truths nor predictions, and
    0.0 when there are predictions but no ground truths.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if num_gt == 0:
        ap = None if len(scores) == 0 else 0.0
        return (ap, []) if return_curve else ap
    if len(scores) == 0:
        return (0.0, []) if return_curve else 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / num_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    if return_curve:
        return ap, list(zip(recall.tolist(), precision.tolist()))
    return ap


def _frame_class(pred_frame, gt_frame, cfg):
    preds = getattr(pred_frame, "instances", pred_frame)
    gts = getattr(gt_frame, "instances", gt_frame)
    for inst in list(preds) + list(gts):
        if inst.class_id not in cfg.classes:
            raise ValueError(f"class {inst.class_id!r} not in evaluation classes")
    out = {}
    for c in cfg.classes:
        p = [x for x in preds if x.class_id == c and x.score >= cfg.score_floor]
        g = [x for x in gts if x.class_id == c]
        out[c] = (np.array([x.score for x in p]),
                  chamfer_matrix([x.points for x in p], [x.points for x in g]), len(g))
    return out


def evaluate(dataset, cfg: EvalConfig = EvalConfig(), workers: int = 1) -> EvalReport:
    """Per-class, per-threshold AP and their mean over a list of (pred, gt) frames.

    Each frame may be a MapFrame or a plain list of MapInstances. ``workers``
    computes per-frame distance matrices in a thread pool.
    """
    dataset = list(dataset)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            frames = list(ex.map(lambda fr: _frame_class(*fr, cfg), dataset))
    else:
        frames = [_frame_class(p, g, cfg) for p, g in dataset]
    per_class = {c: {"scores": [], "dist": [], "num_gt": 0} for c in cfg.classes}
    for fr in frames:
        for c, (scores, dist, n_gt) in fr.items():
            per_class[c]["scores"].append(scores)
            per_class[c]["dist"].append(dist)
            per_class[c]["num_gt"] += n_gt

    ap, class_ap, curves = {}, {}, {}
    for c, acc in per_class.items():
        ap[c], curves[c] = {}, {}
        for tau in cfg.thresholds:
            flags = [_greedy(d, s, tau) if d.size else np.zeros(len(s), dtype=bool)
                     for d, s in zip(acc["dist"], acc["scores"])]
            scores = np.concatenate(acc["scores"]) if acc["scores"] else np.zeros(0)
            flags = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
            ap[c][tau], curves[c][tau] = average_precision(
                scores, flags, acc["num_gt"], return_curve=True)
        vals = [v for v in ap[c].values() if v is not None]
        class_ap[c] = float(np.mean(vals)) if vals else None
    valid = [v for v in class_ap.values() if v is not None]
    m = float(np.mean(valid)) if valid else None
    return EvalReport(ap, class_ap, m, curves)
