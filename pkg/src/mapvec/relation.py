"""Relation embeddings and relation-biased self-attention for the map decoder.

Shapes follow the convention ``(heads, L, L)`` for attention biases and
``(L, d_model)`` for query sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import MapInstance, chamfer_distance, edge_directions

LOG_EPS = 1e-4


@dataclass(frozen=True)
class SpeConfig:
    dim: int = 32
    temperature: float = 10000.0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2:
            raise ValueError(f"encoding width must be a positive even integer, got {self.dim}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class RelationWeights:
    """Linear map from encoded relation features to one bias per head."""

    weight: np.ndarray  # (in_features, heads)
    bias: np.ndarray    # (heads,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[1] != len(self.bias):
            raise ValueError("weight must be (in_features, heads) matching bias")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("relation weights must be finite")

    @property
    def heads(self) -> int:
        return len(self.bias)

    @classmethod
    def random(cls, in_features, heads, rng, scale=None):
        scale = scale if scale is not None else 1.0 / np.sqrt(in_features)
        return cls(rng.normal(0, scale, (in_features, heads)), rng.normal(0, scale, heads))

    @classmethod
    def zeros(cls, in_features, heads):
        return cls(np.zeros((in_features, heads)), np.zeros(heads))

    def to_json(self) -> str:
        return json.dumps({"weight": self.weight.tolist(), "bias": self.bias.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "RelationWeights":
        d = json.loads(text)
        return cls(d["weight"], d["bias"])


def spe(values, cfg: SpeConfig = SpeConfig()) -> np.ndarray:
    """Sinusoidal encoding of each scalar; the last axis of ``values`` is concatenated.

    A scalar ``v`` becomes ``[sin(v/T^(0/d)), cos(v/T^(0/d)), sin(v/T^(2/d)), ...]``.
    An input of shape ``(..., k)`` gives ``(..., k * dim)``.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("encoded values must be finite")
    freq = cfg.temperature ** (np.arange(0, cfg.dim, 2) / cfg.dim)
    arg = v[..., None] / freq
    out = np.empty(v.shape + (cfg.dim,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out.reshape(v.shape[:-1] + (-1,)) if v.ndim else out


def rel_pt(points) -> np.ndarray:
    """Log-difference of normalized coordinates for every point pair, (N, N, 2)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :] + 1.0
    out = np.log(np.maximum(diff, LOG_EPS))
    idx = np.arange(len(pts))
    out[idx, idx] = 0.0
    return out


def turning_similarity(edges, closed: bool = False) -> np.ndarray:
    """Cosine between each point's incoming and outgoing edge, one value per point.

    Open polylines get 0 at both endpoints. For closed polygons edge ``k`` runs
    from point ``k`` to ``k + 1`` and every point has two adjacent edges.
    """
    e = np.asarray(edges, dtype=np.float64).reshape(-1, 2)
    if closed:
        incoming, outgoing = np.roll(e, 1, axis=0), e
        t = (incoming * outgoing).sum(axis=1)
    else:
        t = np.zeros(len(e) + 1)
        t[1:-1] = (e[:-1] * e[1:]).sum(axis=1)
    return t


def rel_dir(edges, closed: bool = False) -> np.ndarray:
    t = turning_similarity(edges, closed)
    return t[:, None] - t[None, :]


def _project(features, w: RelationWeights) -> np.ndarray:
    if features.shape[-1] != w.weight.shape[0]:
        raise ValueError(f"feature width {features.shape[-1]} != weight rows {w.weight.shape[0]}")
    out = np.maximum(features @ w.weight + w.bias, 0.0)
    return np.moveaxis(out, -1, 0)


def point_relation_bias(points, edges, w: RelationWeights, cfg: SpeConfig = SpeConfig(),
                        closed: bool = False) -> np.ndarray:
    """Per-head point-level attention bias of one instance, (heads, N, N).

    Args:
        points: normalized point coordinates, (N, 2).
        edges: unit edge directions from ``edge_directions``.
        w: projection from ``3 * cfg.dim`` encoded features to heads.
        cfg: sinusoidal encoding settings.
        closed: whether the instance is a polygon.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    rd = rel_dir(edges, closed)
    if rd.shape[0] != len(pts):
        raise ValueError(f"{len(pts)} points but edges imply {rd.shape[0]}")
    feats = np.concatenate([rel_pt(pts), rd[..., None]], axis=-1)
    return _project(spe(feats, cfg), w)


def rel_sd(instances) -> np.ndarray:
    """Score-signed chamfer distance between every pair of instances."""
    n = len(instances)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sign = np.sign(instances[i].score - instances[j].score)
            if sign == 0:
                continue
            d = chamfer_distance(instances[i].points, instances[j].points)
            out[i, j] = sign * d
            out[j, i] = -sign * d
    return out


def instance_relation_bias(instances, w: RelationWeights,
                           cfg: SpeConfig = SpeConfig()) -> np.ndarray:
    feats = rel_sd(instances)[..., None]
    return _project(spe(feats, cfg), w)


# -- attention ----------------------------------------------------------------

@dataclass
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    heads: int = 1

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def random(cls, d_model, heads, rng, scale=None):
        if d_model % heads:
            raise ValueError("d_model must be divisible by the head count")
        s = scale if scale is not None else 1.0 / np.sqrt(d_model)
        mats = [rng.normal(0, s, (d_model, d_model)) for _ in range(4)]
        vecs = [rng.normal(0, s, d_model) for _ in range(4)]
        return cls(*mats, *vecs, heads=heads)


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(x, w: AttentionWeights, bias=None) -> np.ndarray:
    """Row-stochastic attention matrices, (heads, L, L)."""
    x = np.asarray(x, dtype=np.float64)
    L, d = x.shape
    if d != w.d_model:
        raise ValueError(f"embedding width {d} != d_model {w.d_model}")
    dk = d // w.heads
    q = (x @ w.wq + w.bq).reshape(L, w.heads, dk).transpose(1, 0, 2)
    k = (x @ w.wk + w.bk).reshape(L, w.heads, dk).transpose(1, 0, 2)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(dk)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.ndim == 2:
            bias = np.broadcast_to(bias, (w.heads, L, L))
        if bias.shape != (w.heads, L, L):
            raise ValueError(f"bias shape {bias.shape} != {(w.heads, L, L)}")
        logits = bias + logits
    return _softmax(logits)


def relation_self_attention(x, bias, w: AttentionWeights) -> np.ndarray:
    """Multi-head self-attention with an additive per-head bias on the logits.

    ``bias=None`` is plain scaled dot-product attention through the same code.
    """
    x = np.asarray(x, dtype=np.float64)
    L = len(x)
    dk = w.d_model // w.heads
    attn = attention_weights(x, w, bias)
    v = (x @ w.wv + w.bv).reshape(L, w.heads, dk).transpose(1, 0, 2)
    out = (attn @ v).transpose(1, 0, 2).reshape(L, w.d_model)
    return out @ w.wo + w.bo


def plain_attention(x, w: AttentionWeights) -> np.ndarray:
    return relation_self_attention(x, None, w)


def layer_norm(x, scale=None, shift=None, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    out = (x - mu) / np.sqrt(var + eps)
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return out


@dataclass
class DecoderLayerWeights:
    inst_attn: AttentionWeights
    point_attn: AttentionWeights
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    ln_scale: np.ndarray  # (3, d_model): after instance attn, point attn, ffn
    ln_shift: np.ndarray

    @classmethod
    def random(cls, d_model, heads, rng, d_ffn=None):
        d_ffn = d_ffn or 2 * d_model
        s1, s2 = 1 / np.sqrt(d_model), 1 / np.sqrt(d_ffn)
        return cls(
            AttentionWeights.random(d_model, heads, rng),
            AttentionWeights.random(d_model, heads, rng),
            rng.normal(0, s1, (d_model, d_ffn)), rng.normal(0, s1, d_ffn),
            rng.normal(0, s2, (d_ffn, d_model)), rng.normal(0, s2, d_model),
            np.ones((3, d_model)), np.zeros((3, d_model)),
        )


@dataclass
class DecoderQuerySet:
    """Point queries grouped by instance.

    Attributes:
        embeddings: (N_ins, N_p, d_model) query embeddings.
        reference_points: (N_ins, N_p, 2) normalized BEV coordinates.
        class_probs: (N_ins, n_classes) class probabilities.
    """

    embeddings: np.ndarray
    reference_points: np.ndarray
    class_probs: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.reference_points = np.asarray(self.reference_points, dtype=np.float64)
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        n_ins, n_p, _ = self.embeddings.shape
        if self.reference_points.shape != (n_ins, n_p, 2):
            raise ValueError("reference points must be (N_ins, N_p, 2)")
        if len(self.class_probs) != n_ins:
            raise ValueError("one class-probability row per instance")
        if np.any(self.class_probs < 0) or np.any(self.class_probs > 1):
            raise ValueError("class probabilities must lie in [0, 1]")

    @property
    def scores(self) -> np.ndarray:
        return self.class_probs.max(axis=-1)


def query_instances(qs: DecoderQuerySet, class_names=None, closed=None):
    """Wrap reference points and scores as MapInstances for relation features."""
    from .geometry import CLASSES
    names = class_names or [CLASSES[k] for k in qs.class_probs.argmax(axis=-1)]
    closed = closed if closed is not None else [False] * len(names)
    return [MapInstance(c, pts, cl, float(s))
            for c, pts, cl, s in zip(names, qs.reference_points, closed, qs.scores)]


def relation_biases(qs: DecoderQuerySet, pt_w: RelationWeights, ins_w: RelationWeights,
                    cfg: SpeConfig = SpeConfig(), closed=None):
    """Point-level biases (N_ins, heads, N_p, N_p) and instance bias (heads, N_ins, N_ins)."""
    insts = query_instances(qs, closed=closed)
    pt = np.stack([
        point_relation_bias(inst.points, edge_directions(inst.points, inst.closed),
                            pt_w, cfg, inst.closed)
        for inst in insts
    ])
    return pt, instance_relation_bias(insts, ins_w, cfg)


def decoupled_decoder_layer(qs: DecoderQuerySet, pt_bias, ins_bias,
                            w: DecoderLayerWeights) -> DecoderQuerySet:
    """One decoupled self-attention layer: instance level, point level, then FFN.

    Instance-level attention runs over the N_ins queries at each point slot with
    the shared ``ins_bias``; point-level attention runs over the N_p queries of
    each instance with that instance's ``pt_bias``. Each sub-block is residual
    and post-normalized. ``None`` biases give the vanilla layer.
    """
    x = qs.embeddings
    n_ins, n_p, d = x.shape
    if pt_bias is not None and np.shape(pt_bias)[0] != n_ins:
        raise ValueError("one point-level bias per instance")

    inst = np.empty_like(x)
    for k in range(n_p):
        inst[:, k] = relation_self_attention(x[:, k], ins_bias, w.inst_attn)
    x = layer_norm(x + inst, w.ln_scale[0], w.ln_shift[0])

    pts = np.empty_like(x)
    for i in range(n_ins):
        b = None if pt_bias is None else pt_bias[i]
        pts[i] = relation_self_attention(x[i], b, w.point_attn)
    x = layer_norm(x + pts, w.ln_scale[1], w.ln_shift[1])

    h = np.maximum(x @ w.ffn_w1 + w.ffn_b1, 0.0) @ w.ffn_w2 + w.ffn_b2
    x = layer_norm(x + h, w.ln_scale[2], w.ln_shift[2])
    return DecoderQuerySet(x, qs.reference_points, qs.class_probs)
