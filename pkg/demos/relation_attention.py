"""Relation features and relation-biased self-attention over a small query set."""
import numpy as np

from mapvec.geometry import MapInstance, edge_directions
from mapvec.relation import (AttentionWeights, RelationWeights, SpeConfig, instance_relation_bias,
                             plain_attention, point_relation_bias, rel_sd,
                             relation_self_attention)

rng = np.random.default_rng(0)
heads, d = 4, 16
cfg = SpeConfig(dim=8)

pts = np.c_[np.linspace(-0.5, 0.5, 6), 0.2 * np.sin(np.linspace(0, 3, 6))]
pt_bias = point_relation_bias(pts, edge_directions(pts), RelationWeights.random(3 * cfg.dim,
                                                                                heads, rng), cfg)
print("point bias", pt_bias.shape, "diagonal of head 0:", np.round(np.diag(pt_bias[0]), 3))

insts = [MapInstance("lane_divider", rng.normal(size=(6, 2)), False, s)
         for s in (0.9, 0.4, 0.7)]
print("signed chamfer between instances:\n", np.round(rel_sd(insts), 3))
ins_bias = instance_relation_bias(insts, RelationWeights.random(cfg.dim, heads, rng), cfg)

w = AttentionWeights.random(d, heads, rng)
x = rng.normal(size=(3, d))
biased = relation_self_attention(x, ins_bias, w)
print("max change from the bias:", float(np.abs(biased - plain_attention(x, w)).max()))
print("zero bias is plain attention:",
      np.array_equal(relation_self_attention(x, np.zeros_like(ins_bias), w), plain_attention(x, w)))
