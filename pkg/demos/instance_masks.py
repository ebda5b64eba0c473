"""Query masks over a BEV grid, rasterised targets and the mask losses."""
import numpy as np

from mapvec.geometry import BevExtent, MapInstance
from mapvec.masks import MaskMLP, dice_loss, mask_gfc, mask_gfl, project_masks, rasterize_instance

ext = BevExtent(-4, 4, -4, 4)
crossing = MapInstance("pedestrian_crossing", [[-2, -1], [2, -1], [2, 1], [-2, 1]], True)
lane = MapInstance("lane_divider", [[-3, -3], [3, 3]])
targets = np.stack([rasterize_instance(i, ext, 16, 16) for i in (crossing, lane)])
print("target cells:", targets.sum(axis=(1, 2)))
print(targets[0].astype(int))

rng = np.random.default_rng(0)
bev = rng.normal(size=(16, 16, 4))
masks = project_masks(rng.normal(size=(2, 8)), MaskMLP.random(8, 4, rng), bev)
print("mask range", masks.min().round(3), masks.max().round(3))
for m, t in zip(masks, targets):
    print(f"gfl {mask_gfl(m, t, 0.8):.4f}  dice {dice_loss(m, t):.4f}")
print("pairwise gfc cost:\n", np.round(mask_gfc(masks, targets, np.full((2, 2), 0.8)), 4))
