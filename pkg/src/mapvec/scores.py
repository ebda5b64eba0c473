"""Geometry-aware classification scores, focal losses/costs and loss composition.

Probabilities are clamped to ``[EPS, 1 - EPS]`` before any logarithm. Every
loss that takes a probability also has a ``*_grad`` companion returning the
analytic derivative with respect to that probability (used by the gradient
checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import (BevExtent, MapInstance, edge_directions, enclosing_box,
                       giou, normalize_points)

EPS = 1e-6


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.gamma)):
            raise ValueError("focal parameters must be finite")
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("focal parameters must be non-negative")


@dataclass(frozen=True)
class GcsConfig:
    use_p2p: bool = True
    use_dir: bool = True
    use_giou: bool = False
    combine: str = "product"

    def __post_init__(self):
        if not (self.use_p2p or self.use_dir or self.use_giou):
            raise ValueError("at least one geometry score must be enabled")
        if self.combine not in ("product", "mean"):
            raise ValueError(f"unknown combine rule {self.combine!r}")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_p2p: float = 4.0
    lambda_dir: float = 0.005
    lambda_mgf: float = 30.0
    lambda_dice: float = 3.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and non-negative")


def _check_prob(x, name="p"):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def cross_entropy(p, target):
    """Binary cross entropy of prediction ``p`` against a soft ``target``."""
    p = _clamp(p)
    return -(target * np.log(p) + (1.0 - target) * np.log1p(-p))


# -- geometry-aware classification scores -----------------------------------

def gcs_p2p(pred, gt) -> float:
    """Point-to-point score on normalized coordinates, ``1 - mean|.|_1 / 2``."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise ValueError(f"point count mismatch: {pred.shape} vs {gt.shape}")
    manhattan = np.abs(pred - gt).sum(axis=1)
    return max(0.0, 1.0 - manhattan.sum() / (2 * len(pred)))


def _cosines(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if a.shape != b.shape:
        raise ValueError(f"edge count mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dot = (a * b).sum(axis=1)
    ok = (na > 0) & (nb > 0)
    cos = np.zeros(len(a))
    cos[ok] = dot[ok] / (na[ok] * nb[ok])
    return np.clip(cos, -1.0, 1.0)


def gcs_dir(pred_edges, gt_edges) -> float:
    cos = _cosines(pred_edges, gt_edges)
    return float(np.clip(0.5 + cos.sum() / (2 * len(cos)), 0.0, 1.0))


def gcs_giou(pred_box, gt_box) -> float:
    return float(np.clip(0.5 + 0.5 * giou(pred_box, gt_box), 0.0, 1.0))


def gcs_components(pred: MapInstance, gt: MapInstance,
                   extent: BevExtent = BevExtent()) -> dict:
    """All three geometry scores of ``pred`` against ``gt`` in its given order."""
    return {
        "p2p": gcs_p2p(normalize_points(pred.points, extent),
                       normalize_points(gt.points, extent)),
        "dir": gcs_dir(edge_directions(pred.points, gt.closed),
                       edge_directions(gt.points, gt.closed)),
        "giou": gcs_giou(enclosing_box(pred.points), enclosing_box(gt.points)),
    }


def combine_scores(parts: dict, cfg: GcsConfig = GcsConfig()) -> float:
    chosen = [parts[k] for k, on in (("p2p", cfg.use_p2p), ("dir", cfg.use_dir),
                                     ("giou", cfg.use_giou)) if on]
    if cfg.combine == "product":
        return float(np.prod(chosen))
    return float(np.mean(chosen))


def gcs_combined(pred: MapInstance, gt: MapInstance, cfg: GcsConfig = GcsConfig(),
                 extent: BevExtent = BevExtent()) -> float:
    """Combined geometry score ``s_geo`` of a prediction against its ground truth.

    Edge directions use the ground truth's open/closed flag for both sides so the
    edge counts agree.
    """
    if len(pred.points) != len(gt.points):
        raise ValueError("prediction and ground truth need the same point count")
    return combine_scores(gcs_components(pred, gt, extent), cfg)


# -- focal losses and costs ---------------------------------------------------

def gfl_positive(p, s_geo):
    """Per-candidate positive term ``s_geo * CE(p; s_geo)``."""
    return s_geo * cross_entropy(p, s_geo)


def gfl_positive_grad(p, s_geo):
    p = _clamp(np.asarray(p, dtype=np.float64))
    return s_geo * (-s_geo / p + (1.0 - s_geo) / (1.0 - p))


def focal_negative(p, fp: FocalParams = FocalParams()):
    """Per-candidate negative term ``alpha * p^gamma * CE(p; 0)``."""
    pc = _clamp(p)
    return fp.alpha * pc ** fp.gamma * -np.log1p(-pc)


def focal_negative_grad(p, fp: FocalParams = FocalParams()):
    p = _clamp(np.asarray(p, dtype=np.float64))
    ce = -np.log1p(-p)
    return fp.alpha * (fp.gamma * p ** (fp.gamma - 1) * ce + p ** fp.gamma / (1.0 - p))


def gfl(positives, negatives, fp: FocalParams = FocalParams()) -> float:
    """Geometry-aware focal loss summed over candidates.

    Args:
        positives: iterable of ``(p, s_geo)`` for matched candidates.
        negatives: iterable of probabilities for unmatched candidates.
        fp: focal parameters for the negative branch.
    """
    pos = np.asarray(list(positives), dtype=np.float64).reshape(-1, 2)
    neg = np.asarray(list(negatives), dtype=np.float64).reshape(-1)
    _check_prob(pos, "positive (p, s_geo)")
    _check_prob(neg, "negative p")
    total = gfl_positive(pos[:, 0], pos[:, 1]).sum() if len(pos) else 0.0
    total += focal_negative(neg, fp).sum() if len(neg) else 0.0
    return float(total)


def gfc(p, s_geo, fp: FocalParams = FocalParams()):
    """Geometry-aware focal matching cost of one prediction against one ground truth.

    Broadcasts over array inputs.
    """
    p = _check_prob(p)
    s_geo = _check_prob(s_geo, "s_geo")
    out = gfl_positive(p, s_geo) - focal_negative(p, fp)
    return float(out) if out.ndim == 0 else out


def gfc_grad(p, s_geo, fp: FocalParams = FocalParams()):
    return gfl_positive_grad(p, s_geo) - focal_negative_grad(p, fp)


def focal_cost(p, fp: FocalParams = FocalParams()):
    """Plain focal classification cost (no geometry), the usual DETR-style term."""
    pc = _clamp(np.asarray(p, dtype=np.float64))
    pos = fp.alpha * (1 - pc) ** fp.gamma * -np.log(pc)
    neg = (1 - fp.alpha) * pc ** fp.gamma * -np.log1p(-pc)
    out = pos - neg
    return float(out) if out.ndim == 0 else out


# -- regression losses --------------------------------------------------------

def p2p_loss(pred, gt, beta: float = 1.0) -> float:
    """Mean smooth-L1 over every coordinate."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    d = np.abs(pred - gt)
    loss = np.where(d < beta, 0.5 * d ** 2 / beta, d - 0.5 * beta)
    return float(loss.mean())


def dir_loss(pred_edges, gt_edges) -> float:
    cos = _cosines(pred_edges, gt_edges)
    return float(np.mean(1.0 - cos))


TERMS = ("cls", "p2p", "dir", "mgf", "dice")


def total_loss(det_terms: dict, seg_terms: dict, w: LossWeights = LossWeights()):
    """Weighted sum of detection and segmentation terms.

    Args:
        det_terms: mapping with any of ``cls``, ``p2p``, ``dir``.
        seg_terms: mapping with any of ``mgf``, ``dice``.
        w: loss weights.

    Returns:
        tuple: ``(total, breakdown)`` where ``breakdown`` maps each term to its
        weighted contribution.
    """
    terms = {**det_terms, **seg_terms}
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    breakdown = {}
    for name in TERMS:
        value = float(terms.get(name, 0.0))
        if not math.isfinite(value):
            raise ValueError(f"loss term {name} is not finite")
        breakdown[name] = getattr(w, f"lambda_{name}") * value
    return sum(breakdown.values()), breakdown
