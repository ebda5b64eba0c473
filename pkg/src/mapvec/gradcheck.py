"""Finite-difference checks of the analytic probability derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import mask_gfl, mask_gfl_grad
from .scores import FocalParams, focal_negative_grad, gfc, gfc_grad, gfl, gfl_positive_grad

# relative error denominator floor: the positive branch has a stationary point
# at p == s_geo where both derivatives vanish
REL_FLOOR = 1e-3

_MASK_TARGET = np.array([[1, 0], [0, 1]], dtype=bool)


def _mask_cell(cell):
    def f(p, s, fp):
        pred = np.full(_MASK_TARGET.shape, 0.5)
        pred[cell] = p
        return mask_gfl(pred, _MASK_TARGET, s, fp)

    def g(p, s, fp):
        pred = np.full(_MASK_TARGET.shape, 0.5)
        pred[cell] = p
        return mask_gfl_grad(pred, _MASK_TARGET, s, fp)[cell]
    return f, g


def checks(corrupt: bool = False):
    """(name, loss(p, s, fp), analytic d/dp(p, s, fp)) triples."""
    fg, gg = _mask_cell((0, 0))
    fb, gb = _mask_cell((0, 1))
    items = [
        ("gfl_positive", lambda p, s, fp: gfl([(p, s)], [], fp),
         lambda p, s, fp: gfl_positive_grad(p, s)),
        ("gfl_negative", lambda p, s, fp: gfl([], [p], fp),
         lambda p, s, fp: focal_negative_grad(p, fp)),
        ("gfc", lambda p, s, fp: gfc(p, s, fp), lambda p, s, fp: gfc_grad(p, s, fp)),
        ("mask_gfl_fg", fg, gg),
        ("mask_gfl_bg", fb, gb),
    ]
    if corrupt:
        name, f, g = items[0]
        items[0] = (name, f, lambda p, s, fp: 1.01 * g(p, s, fp) + 1e-3)
    return items


@dataclass
class GradcheckRow:
    name: str
    step: float
    max_rel_error: float
    worst_p: float
    worst_s: float
    passed: bool


def relative_error(analytic, numeric, floor=None):
    floor = REL_FLOOR if floor is None else floor
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def run_gradcheck(grid=None, steps=(1e-5,), tolerance=1e-4, fp: FocalParams = FocalParams(),
                  corrupt: bool = False):
    """Compare analytic derivatives with central differences over a (p, s_geo) grid."""
    grid = np.round(np.arange(1, 20) * 0.05, 2) if grid is None else np.asarray(grid)
    rows = []
    for name, f, g in checks(corrupt):
        for h in steps:
            worst = (0.0, None, None)
            for p in grid:
                for s in grid:
                    numeric = (f(p + h, s, fp) - f(p - h, s, fp)) / (2 * h)
                    err = relative_error(float(g(p, s, fp)), numeric)
                    if err >= worst[0]:
                        worst = (err, float(p), float(s))
            rows.append(GradcheckRow(name, h, worst[0], worst[1], worst[2], worst[0] < tolerance))
    return rows


def format_table(rows, verdict=True) -> str:
    lines = [f"{'loss':<14}{'step':>8}{'max rel err':>14}{'at p':>7}{'at s':>7}"
             + ("  result" if verdict else "")]
    for r in rows:
        line = (f"{r.name:<14}{r.step:>8.0e}{r.max_rel_error:>14.3e}"
                f"{r.worst_p:>7.2f}{r.worst_s:>7.2f}")
        if verdict:
            line += f"  {'PASS' if r.passed else 'FAIL'}"
        lines.append(line)
    return "\n".join(lines)
