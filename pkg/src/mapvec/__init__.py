"""Numeric machinery for online vectorized HD-map construction.

Geometry-aware classification scores and focal losses, permutation-aware label
assignment, relation-biased decoder attention, key-frame-based BEV temporal
fusion, query-based instance masks and chamfer-mAP evaluation, with a seeded
synthetic scenario generator for exercising all of it without real data.
"""

from .evaluation import EvalConfig, EvalReport, average_precision, evaluate, match_frame
from .geometry import (CLASSES, BevExtent, Box2D, MapInstance, chamfer_distance,
                       edge_directions, enclosing_box, equivalent_orderings, giou,
                       normalize_points)
from .io import MapFrame
from .matcher import (AssignmentResult, CostMatrix, brute_force_assign, build_cost,
                      solve_hungarian)
from .scores import (FocalParams, GcsConfig, LossWeights, dir_loss, gcs_combined, gcs_dir,
                     gcs_giou, gcs_p2p, gfc, gfl, p2p_loss, total_loss)
from .temporal import BevGrid, KfsState, Pose2, warp

__version__ = "0.1.0"
