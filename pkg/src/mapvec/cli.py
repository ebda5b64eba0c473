"""``mapvec`` command line: gen | eval | assign | fuse | gradcheck.

Exit codes: 0 success, 1 a check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, load_config
from .evaluation import evaluate
from .gradcheck import format_table, run_gradcheck
from .matcher import brute_force_assign, build_cost, solve_hungarian
from .synth import generate_scenario
from .temporal import FusionWeights, run_fusion

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

GT_FILE, PRED_FILE, BEV_FILE = "gt.json", "pred.json", "bev.json"


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("MAPVEC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MAPVEC_THREADS must be an integer, got {raw!r}") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    scenario = cfg.scenario
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt, preds, grids = generate_scenario(scenario)
    io.save_frames(out / GT_FILE, gt, scenario.extent)
    io.save_frames(out / PRED_FILE, preds, scenario.extent)
    io.save_grids(out / BEV_FILE, grids)
    manifest = {
        "seed": scenario.seed,
        "road_template": scenario.road_template,
        "files": [{"path": name, "sha256": _sha256(out / name)}
                  for name in (GT_FILE, PRED_FILE, BEV_FILE)],
    }
    sys.stdout.write(io.dumps(manifest))
    return EXIT_OK


def _load_pair(pred_path, gt_path):
    preds, _ = io.load_frames(pred_path)
    gts, _ = io.load_frames(gt_path)
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} prediction frames vs {len(gts)} ground-truth frames")
    return preds, gts


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    ecfg = cfg.eval
    if args.score_floor is not None:
        ecfg = dataclasses.replace(ecfg, score_floor=args.score_floor)
    preds, gts = _load_pair(args.pred, args.gt)
    report = evaluate(list(zip(preds, gts)), ecfg, workers=_threads())
    sys.stdout.write(io.dumps(report.to_dict()))
    if args.pr_csv:
        with open(args.pr_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "threshold", "recall", "precision"])
            w.writerows(report.pr_rows())
    return EXIT_OK


def cmd_assign(args) -> int:
    cfg = load_config(args.config)
    preds, gts = _load_pair(args.pred, args.gt)
    if not 0 <= args.frame < len(gts):
        raise UsageError(f"frame {args.frame} out of range 0..{len(gts) - 1}")
    p, g = preds[args.frame].instances, gts[args.frame].instances
    if not p and not g:
        sys.stdout.write(io.dumps({"frame": args.frame, "pairs": [], "total": 0.0}))
        return EXIT_OK
    cost = build_cost(p, g, cfg.gcs, cfg.focal, cfg.matcher.w_cls, cfg.matcher.w_pts,
                      cfg.matcher.w_dir, cfg.eval.extent)
    result = brute_force_assign(cost) if args.oracle else solve_hungarian(cost)
    rows = [{"pred": i, "gt": j, "ordering": k, "cost": c,
             "cls_term": float(cost.parts["cls"][i, j]), "pts_term": float(cost.parts["pts"][i, j]),
             "s_geo": float(cost.parts["s_geo"][i, j])}
            for i, j, k, c in result.pairs]
    if args.json:
        sys.stdout.write(io.dumps({"frame": args.frame, "solver": "brute_force" if args.oracle
                                   else "hungarian", "pairs": rows, "total": result.total}))
        return EXIT_OK
    print(f"frame {args.frame}: {len(p)} predictions, {len(g)} ground truths")
    print(f"{'pred':>5}{'gt':>5}{'order':>7}{'cost':>11}{'gfc':>11}{'points':>10}{'s_geo':>8}")
    for r in rows:
        print(f"{r['pred']:>5}{r['gt']:>5}{r['ordering']:>7}{r['cost']:>11.5f}"
              f"{r['cls_term']:>11.5f}{r['pts_term']:>10.5f}{r['s_geo']:>8.4f}")
    print(f"total {result.total:.6f}; unmatched predictions: {result.unmatched_preds}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    cfg = load_config(args.config)
    path = Path(args.fixtures)
    if path.is_dir():
        path = path / BEV_FILE
    grids = io.load_grids(path)
    if not grids:
        raise UsageError("fixture has no grids")
    shape = grids[0].shape
    if any(g.shape != shape for g in grids):
        raise UsageError("all BEV grids must share one shape")
    k = cfg.kfs
    rng = np.random.default_rng(k.weight_seed)
    weights = FusionWeights.random(shape[-1], rng, n_pre=k.n_pre, kernel=k.kernel)
    steps = run_fusion(grids, weights, args.mode, k.n_pre, k.d_stride, k.scheduler,
                       seed=k.weight_seed)
    frames, prev = [], None
    for s in steps:
        residual = None if prev is None else float(np.abs(s.submap.data - prev).max())
        frames.append({"index": s.index, "keyframe": s.keyframe,
                       "submap_norm": float(np.linalg.norm(s.submap.data)),
                       "global_norm": float(np.linalg.norm(s.global_feature.data)),
                       "residual": residual})
        prev = s.submap.data
    sys.stdout.write(io.dumps({"mode": args.mode, "d_stride": k.d_stride, "n_pre": k.n_pre,
                               "keyframes": [s.index for s in steps if s.keyframe],
                               "frames": frames}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config).gradcheck
    gate = run_gradcheck(cfg.grid, (cfg.step,), cfg.tolerance, corrupt=args.inject_fault)
    sweep = run_gradcheck(cfg.grid, cfg.sweep, cfg.tolerance, corrupt=args.inject_fault)
    ok = all(r.passed for r in gate)
    print(f"finite-difference check, step {cfg.step:g}, tolerance {cfg.tolerance:g}")
    print(format_table(gate))
    print("\nstep sweep")
    print(format_table(sweep, verdict=False))
    print("\nPASS" if ok else "\nFAIL")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapvec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration JSON (defaults if omitted)")
        return p

    p = common(sub.add_parser("gen", help="write a synthetic scenario"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = common(sub.add_parser("eval", help="chamfer mAP of predictions against ground truth"))
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--score-floor", type=float)
    p.add_argument("--pr-csv")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("assign", help="label assignment for one frame"))
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="use exhaustive search")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_assign)

    p = common(sub.add_parser("fuse", help="run key-frame temporal fusion over BEV fixtures"))
    p.add_argument("fixtures", help="directory holding bev.json, or the file itself")
    p.add_argument("--mode", choices=("streaming", "stacking"), default="streaming")
    p.set_defaults(func=cmd_fuse)

    p = common(sub.add_parser("gradcheck", help="finite-difference derivative checks"))
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, io.FormatError, ValueError, OSError) as e:
        print(f"mapvec {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
