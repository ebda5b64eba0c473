"""Chamfer distance, geometry scores and the geometry-aware focal terms on one lane."""
import numpy as np

from mapvec.geometry import MapInstance, chamfer_distance, equivalent_orderings
from mapvec.scores import gcs_combined, gcs_components, gfc, focal_cost, gfl_positive

rng = np.random.default_rng(0)
gt = MapInstance("lane_divider", np.c_[np.zeros(20), np.linspace(-14, 14, 20)])

print("sigma  chamfer  p2p    dir    giou   s_geo")
for sigma in (0.0, 0.1, 0.5, 1.0):
    pred = gt.with_points(gt.points + rng.normal(0, sigma, gt.points.shape))
    parts = gcs_components(pred, gt)
    print(f"{sigma:5.1f}  {chamfer_distance(pred.points, gt.points):7.3f}  "
          f"{parts['p2p']:.3f}  {parts['dir']:.3f}  {parts['giou']:.3f}  {gcs_combined(pred, gt):.3f}")

# a reversed polyline is the same element; a closed square has 2N orderings
print("\nopen orderings:", len(equivalent_orderings(gt.points)))
square = [[0, 0], [1, 0], [1, 1], [0, 1]]
print("closed orderings:", len(equivalent_orderings(square, closed=True)))

# the positive loss is smallest where the confidence equals the geometry score
p = np.linspace(0.01, 0.99, 99)
for s in (0.3, 0.7):
    print(f"\ns_geo={s}: loss minimised at p={p[np.argmin(gfl_positive(p, s))]:.2f}")
    print(f"  gfc(0.9, s)={gfc(0.9, s):.4f}   focal cost(0.9)={focal_cost(0.9):.4f}")
