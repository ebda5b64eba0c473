"""Warp BEV grids with ego motion and run keyframe-based fusion over a drive."""
import numpy as np

from mapvec.synth import ScenarioConfig, generate_scenario
from mapvec.temporal import BevGrid, FusionWeights, Pose2, run_fusion, warp

g = BevGrid(np.arange(12.0).reshape(4, 3, 1), cell_size=0.5)
print("one cell to +x:\n", warp(g, Pose2(0.5, 0, 0)).data[..., 0])

cfg = ScenarioConfig(num_frames=12, bev_height=40, bev_width=20, cell_size=1.5)
_, _, grids = generate_scenario(cfg)
w = FusionWeights.random(cfg.bev_channels, np.random.default_rng(0))
for mode in ("streaming", "stacking"):
    steps = run_fusion(grids, w, mode=mode)
    print(f"\n{mode}: keyframes {[s.index for s in steps if s.keyframe]}")
    print("  global norms", [round(float(np.linalg.norm(s.global_feature.data)), 2)
                             for s in steps[:6]])
