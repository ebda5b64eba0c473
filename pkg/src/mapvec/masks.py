"""Query-based instance masks on the BEV grid and their losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BevExtent, MapInstance
from .scores import (FocalParams, focal_negative, focal_negative_grad, gfl_positive,
                     gfl_positive_grad)

DICE_SMOOTH = 1.0


@dataclass
class MaskMLP:
    """Two-layer MLP with ReLU mapping query embeddings to BEV channel weights."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def random(cls, d_model, channels, rng):
        s = 1 / np.sqrt(d_model)
        return cls(rng.normal(0, s, (d_model, d_model)), rng.normal(0, s, d_model),
                   rng.normal(0, s, (d_model, channels)), rng.normal(0, s, channels))

    @classmethod
    def zeros(cls, d_model, channels):
        return cls(np.zeros((d_model, d_model)), np.zeros(d_model),
                   np.zeros((d_model, channels)), np.zeros(channels))

    def __call__(self, x):
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def project_masks(queries, mlp: MaskMLP, f_bev) -> np.ndarray:
    """Per-query probability masks, shape (N_queries, H, W).

    Args:
        queries: (N, d_model) decoder query embeddings.
        mlp: projection from d_model to the BEV channel count.
        f_bev: (H, W, C) feature array or a BevGrid.
    """
    data = getattr(f_bev, "data", f_bev)
    emb = mlp(np.asarray(queries, dtype=np.float64))
    if emb.shape[-1] != data.shape[-1]:
        raise ValueError(f"MLP width {emb.shape[-1]} != BEV channels {data.shape[-1]}")
    return _sigmoid(np.einsum("hwc,nc->nhw", data, emb))


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    return pred, target.astype(bool)


def mask_gfl(pred, target, s_geo: float, fp: FocalParams = FocalParams()) -> float:
    """Geometry-aware focal loss averaged over mask cells."""
    pred, fg = _pair(pred, target)
    loss = np.where(fg, gfl_positive(pred, s_geo), focal_negative(pred, fp))
    return float(loss.mean())


def mask_gfl_grad(pred, target, s_geo: float, fp: FocalParams = FocalParams()) -> np.ndarray:
    """Derivative of ``mask_gfl`` with respect to every cell probability."""
    pred, fg = _pair(pred, target)
    g = np.where(fg, gfl_positive_grad(pred, s_geo), focal_negative_grad(pred, fp))
    return g / pred.size


def mask_gfc(pred, target, s_geo, fp: FocalParams = FocalParams()):
    """Mask matching cost between predicted and target masks.

    Foreground cells pay the geometry-weighted positive term, background cells
    the focal negative term, averaged over cells. With stacks ``pred``
    (N, H, W), ``target`` (M, H, W) and ``s_geo`` (N, M) this returns the
    (N, M) cost matrix; with single masks it returns a float.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target).astype(np.float64)
    if pred.ndim == 2:
        return mask_gfl(pred, target, float(s_geo), fp)
    if pred.shape[1:] != target.shape[1:]:
        raise ValueError("mask shapes differ")
    s_geo = np.broadcast_to(np.asarray(s_geo, dtype=np.float64), (len(pred), len(target)))
    n_cells = pred[0].size
    p = pred.reshape(len(pred), -1)
    t = target.reshape(len(target), -1)
    neg = focal_negative(p, fp) @ (1.0 - t).T
    pos = np.empty((len(pred), len(target)))
    for j in range(len(target)):
        pos[:, j] = (gfl_positive(p, s_geo[:, j, None]) * t[j]).sum(axis=1)
    return (pos + neg) / n_cells


def dice_loss(pred, target) -> float:
    pred, fg = _pair(pred, target)
    t = fg.astype(np.float64)
    return float(1.0 - 2.0 * (pred * t).sum() / (pred.sum() + t.sum() + DICE_SMOOTH))


def _cell_index(pts, extent: BevExtent, h: int, w: int):
    cw = (extent.x_max - extent.x_min) / w
    ch = (extent.y_max - extent.y_min) / h
    cols = np.floor((pts[:, 0] - extent.x_min) / cw).astype(int)
    rows = np.floor((pts[:, 1] - extent.y_min) / ch).astype(int)
    return rows, cols


def _bresenham(r0, c0, r1, c1):
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr


def _fill_polygon(pts, extent, h, w, mask):
    # even-odd rule on cell centers, one scanline per row
    cw = (extent.x_max - extent.x_min) / w
    ch = (extent.y_max - extent.y_min) / h
    xc = extent.x_min + (np.arange(w) + 0.5) * cw
    a, b = pts, np.roll(pts, -1, axis=0)
    for r in range(h):
        y = extent.y_min + (r + 0.5) * ch
        xs = []
        for (x0, y0), (x1, y1) in zip(a, b):
            if (y0 <= y) != (y1 <= y):
                xs.append(x0 + (y - y0) * (x1 - x0) / (y1 - y0))
        xs.sort()
        for lo, hi in zip(xs[0::2], xs[1::2]):
            mask[r, (xc >= lo) & (xc < hi)] = True


def rasterize_instance(inst: MapInstance, extent: BevExtent = BevExtent(),
                       h: int = 200, w: int = 100) -> np.ndarray:
    """Binary (H, W) target mask: 1-cell strokes for polylines, scanline fill for polygons."""
    mask = np.zeros((h, w), dtype=bool)
    if inst.closed:
        _fill_polygon(inst.points, extent, h, w, mask)
        return mask
    rows, cols = _cell_index(inst.points, extent, h, w)
    for k in range(len(rows) - 1):
        for r, c in _bresenham(rows[k], cols[k], rows[k + 1], cols[k + 1]):
            if 0 <= r < h and 0 <= c < w:
                mask[r, c] = True
    return mask
