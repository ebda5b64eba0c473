"""Assign noisy predictions to ground truth with the Hungarian solver and check the oracle."""
import numpy as np

from mapvec.matcher import assign, brute_force_assign
from mapvec.synth import ScenarioConfig, generate_gt, perturb

cfg = ScenarioConfig(sigma=0.3, num_frames=1)
gt = generate_gt(cfg)[0]
pred = perturb(gt, cfg)
order = np.random.default_rng(1).permutation(len(pred.instances))
preds = [pred.instances[i] for i in order]

result, cost = assign(preds, gt.instances)
print("pred -> gt  ordering  cost     s_geo")
for i, j, k, c in result.pairs:
    print(f"{i:4d} -> {j:<3d} {k:8d}  {c:8.4f} {cost.parts['s_geo'][i, j]:.3f}")
print("shuffle recovered:", all(order[i] == j for i, j, *_ in result.pairs))

oracle = brute_force_assign(cost)
print(f"total {result.total:.6f}, exhaustive {oracle.total:.6f}")
