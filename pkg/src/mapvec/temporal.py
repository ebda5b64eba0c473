"""Key-frame-based temporal fusion of BEV feature grids.

Grid layout: ``data[row, col, channel]`` with rows along the ego y axis and
columns along the ego x axis; cell ``(r, c)`` is centered at
``x = x_min + (c + 0.5) * cell_size``, ``y = y_min + (r + 0.5) * cell_size``
with the ego at the grid center.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .relation import layer_norm


@dataclass(frozen=True)
class Pose2:
    """Planar rigid transform: ``world = R(yaw) @ local + (x, y)``."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.yaw)):
            raise ValueError("pose must be finite")
        yaw = float(self.yaw)
        if not -math.pi < yaw <= math.pi:
            yaw = math.atan2(math.sin(yaw), math.cos(yaw))
            if yaw == -math.pi:
                yaw = math.pi
        object.__setattr__(self, "yaw", yaw)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + np.array([self.x, self.y])

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)

    def compose(self, other: "Pose2") -> "Pose2":
        """``self ∘ other``: apply ``other`` first."""
        t = self.apply([other.x, other.y])
        return Pose2(float(t[0]), float(t[1]), self.yaw + other.yaw)

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "yaw": self.yaw}


def relative_pose(source: Pose2, target: Pose2) -> Pose2:
    """Transform taking source-ego coordinates to target-ego coordinates."""
    return target.inverse().compose(source)


@dataclass
class BevGrid:
    data: np.ndarray
    cell_size: float = 0.3
    pose: Pose2 = field(default_factory=Pose2)
    timestamp: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("BEV data must be (H, W, C)")
        if not self.cell_size > 0:
            raise ValueError("cell size must be positive")

    @property
    def shape(self):
        return self.data.shape

    def like(self, data) -> "BevGrid":
        return replace(self, data=np.asarray(data, dtype=np.float64))

    def cell_centers(self) -> np.ndarray:
        """Metric (x, y) of every cell center, shape (H, W, 2)."""
        h, w, _ = self.data.shape
        xs = (np.arange(w) + 0.5 - w / 2) * self.cell_size
        ys = (np.arange(h) + 0.5 - h / 2) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    @classmethod
    def zeros(cls, h, w, c, cell_size=0.3, pose=None, timestamp=0.0):
        return cls(np.zeros((h, w, c)), cell_size, pose or Pose2(), timestamp)


def bilinear_sample(data, rows, cols) -> np.ndarray:
    """Sample ``data`` (H, W, C) at fractional (row, col) indices, zero outside."""
    h, w, c = data.shape
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros(rows.shape + (c,))
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            wgt = wr * wc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wgt > 0)
            out[ok] += wgt[ok, None] * data[rr[ok], cc[ok]]
    return out


def warp(grid: BevGrid, rel: Pose2) -> BevGrid:
    """Resample ``grid`` into the frame reached by ``rel`` (source -> target).

    Every target cell center is mapped back into the source frame and sampled
    bilinearly; samples outside the source grid are zero.
    """
    h, w, _ = grid.shape
    # work in cell units so whole-cell shifts stay exact
    u = np.arange(w) + 0.5 - w / 2
    v = np.arange(h) + 0.5 - h / 2
    gu, gv = np.meshgrid(u, v)
    du, dv = gu - rel.x / grid.cell_size, gv - rel.y / grid.cell_size
    c, s = math.cos(rel.yaw), math.sin(rel.yaw)
    cols = c * du + s * dv + w / 2 - 0.5
    rows = -s * du + c * dv + h / 2 - 0.5
    out = bilinear_sample(grid.data, rows, cols)
    return grid.like(out)


def warp_to(grid: BevGrid, target: Pose2) -> BevGrid:
    """Warp a grid captured at ``grid.pose`` into the ego frame at ``target``."""
    out = warp(grid, relative_pose(grid.pose, target))
    out.pose = target
    return out


# -- learned blocks -----------------------------------------------------------

def conv2d(x, weight, bias=None) -> np.ndarray:
    """'Same' zero-padded 2-D convolution (cross-correlation).

    Args:
        x: (H, W, C_in).
        weight: (k, k, C_in, C_out) with odd k.
        bias: (C_out,) or None.
    """
    k = weight.shape[0]
    if k % 2 == 0 or weight.shape[1] != k:
        raise ValueError("kernel must be square with odd size")
    if weight.shape[2] != x.shape[-1]:
        raise ValueError(f"kernel expects {weight.shape[2]} channels, got {x.shape[-1]}")
    h, w, _ = x.shape
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((h, w, weight.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += xp[dy:dy + h, dx:dx + w] @ weight[dy, dx]
    if bias is not None:
        out += bias
    return out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GruWeights:
    """Gate kernels over the concatenated ``[hidden, input]`` channels."""

    wz: np.ndarray
    wr: np.ndarray
    wh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    @classmethod
    def random(cls, c, rng, kernel=1, scale=None):
        s = scale if scale is not None else 1.0 / np.sqrt(2 * c * kernel * kernel)
        shape = (kernel, kernel, 2 * c, c)
        return cls(*(rng.normal(0, s, shape) for _ in range(3)),
                   *(rng.normal(0, s, c) for _ in range(3)))

    @classmethod
    def zeros(cls, c, kernel=1):
        shape = (kernel, kernel, 2 * c, c)
        return cls(*(np.zeros(shape) for _ in range(3)), *(np.zeros(c) for _ in range(3)))


@dataclass
class ResBlockWeights:
    """Two 3x3 convolutions with ReLU between and a shortcut.

    ``shortcut`` is a (1, 1, C_in, C_out) projection, or None for identity
    (only valid when C_in == C_out).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    shortcut: np.ndarray = None

    @classmethod
    def random(cls, c_in, c_out, rng, scale=0.1):
        sc = None if c_in == c_out else rng.normal(0, 1 / np.sqrt(c_in), (1, 1, c_in, c_out))
        return cls(rng.normal(0, scale / np.sqrt(9 * c_in), (3, 3, c_in, c_out)), np.zeros(c_out),
                   rng.normal(0, scale / np.sqrt(9 * c_out), (3, 3, c_out, c_out)), np.zeros(c_out),
                   sc)

    @classmethod
    def identity(cls, c):
        return cls(np.zeros((3, 3, c, c)), np.zeros(c), np.zeros((3, 3, c, c)), np.zeros(c))


@dataclass
class FusionWeights:
    local_gru: GruWeights
    local_res: ResBlockWeights
    global_gru: GruWeights
    stack_res: ResBlockWeights
    ln_scale: np.ndarray = None
    ln_shift: np.ndarray = None
    use_layer_norm: bool = True

    @classmethod
    def random(cls, c, rng, n_pre=4, kernel=1):
        return cls(GruWeights.random(c, rng, kernel), ResBlockWeights.random(c, c, rng),
                   GruWeights.random(c, rng, kernel),
                   ResBlockWeights.random((n_pre + 1) * c, c, rng),
                   np.ones(c), np.zeros(c))


def gru_fuse(hidden: BevGrid, inp: BevGrid, w: GruWeights) -> BevGrid:
    """Convolutional GRU update of ``hidden`` with ``inp``, per cell."""
    h, x = hidden.data, inp.data
    if h.shape != x.shape:
        raise ValueError(f"hidden {h.shape} and input {x.shape} differ")
    hx = np.concatenate([h, x], axis=-1)
    z = _sigmoid(conv2d(hx, w.wz, w.bz))
    r = _sigmoid(conv2d(hx, w.wr, w.br))
    cand = np.tanh(conv2d(np.concatenate([r * h, x], axis=-1), w.wh, w.bh))
    return inp.like((1.0 - z) * h + z * cand)


def res_block(x, w: ResBlockWeights) -> np.ndarray:
    y = np.maximum(conv2d(x, w.w1, w.b1), 0.0)
    y = conv2d(y, w.w2, w.b2)
    if w.shortcut is None:
        if x.shape[-1] != y.shape[-1]:
            raise ValueError("identity shortcut needs matching channel counts")
        return x + y
    return conv2d(x, w.shortcut) + y


def _ln(data, w: FusionWeights):
    if not w.use_layer_norm:
        return data
    return layer_norm(data, w.ln_scale, w.ln_shift)


# -- key-frame state ----------------------------------------------------------

@dataclass
class KfsState:
    n_pre: int = 4
    d_stride: float = 5.0
    submap: BevGrid = None
    global_feature: BevGrid = None
    keyframe_buffer: deque = None
    last_keyframe_pose: Pose2 = None
    last_pose: Pose2 = None
    distance_since_keyframe: float = 0.0
    scheduler: str = "stride"
    rng: np.random.Generator = None
    next_stride: float = None

    def __post_init__(self):
        if self.keyframe_buffer is None:
            self.keyframe_buffer = deque(maxlen=self.n_pre)
        if self.scheduler not in ("stride", "random"):
            raise ValueError(f"unknown keyframe scheduler {self.scheduler!r}")
        if self.scheduler == "random" and self.rng is None:
            raise ValueError("the random scheduler needs a seeded generator")


def local_fusion(state: KfsState, f_local: BevGrid, w: FusionWeights,
                 use_res_block: bool = True) -> BevGrid:
    """Fold the current local BEV feature into the running submap."""
    if state.submap is None:
        prev = f_local.like(np.zeros_like(f_local.data))
    else:
        if state.submap.shape != f_local.shape:
            raise ValueError("submap and local feature shapes differ")
        if f_local.timestamp <= state.submap.timestamp:
            raise ValueError("local feature must be newer than the submap")
        prev = warp_to(state.submap, f_local.pose)
    fused = _ln(gru_fuse(prev, f_local, w.local_gru).data, w)
    if use_res_block:
        fused = res_block(fused, w.local_res)
    state.submap = f_local.like(fused)
    return state.submap


def keyframe_step(state: KfsState, pose: Pose2, push: bool = True) -> bool:
    """Advance the odometer and report whether ``pose`` starts a new keyframe.

    The decision depends only on planar path length since the last keyframe.
    On a keyframe the current submap (if any) is pushed into the buffer unless
    ``push`` is False, in which case the caller pushes it after global fusion.
    """
    if state.last_pose is None:
        is_key = True
    else:
        state.distance_since_keyframe += state.last_pose.distance_to(pose)
        stride = state.next_stride if state.next_stride is not None else state.d_stride
        is_key = state.distance_since_keyframe >= stride
    state.last_pose = pose
    if is_key:
        state.last_keyframe_pose = pose
        state.distance_since_keyframe = 0.0
        if state.scheduler == "random":
            state.next_stride = float(state.rng.uniform(0.0, state.d_stride))
        if push and state.submap is not None:
            state.keyframe_buffer.append(state.submap)
    return is_key


def global_fusion_streaming(state: KfsState, w: FusionWeights, commit: bool = True) -> BevGrid:
    """Recurrent global feature from the previous global state and current submap."""
    cur = state.submap
    if state.global_feature is None:
        prev = cur.like(np.zeros_like(cur.data))
    else:
        prev = warp_to(state.global_feature, cur.pose)
    out = cur.like(_ln(gru_fuse(prev, cur, w.global_gru).data, w))
    if commit:
        state.global_feature = out
    return out


def global_fusion_stacking(state: KfsState, w: FusionWeights) -> BevGrid:
    """Concatenate warped buffered submaps with the current one and mix them.

    Missing buffer slots are zero so the input always has ``(n_pre + 1) * C``
    channels; slot order is oldest first, current submap last.
    """
    cur = state.submap
    past = [g for g in state.keyframe_buffer if g is not cur][-state.n_pre:]
    zero = np.zeros_like(cur.data)
    slots = [zero] * (state.n_pre - len(past)) + [warp_to(g, cur.pose).data for g in past]
    stacked = np.concatenate(slots + [cur.data], axis=-1)
    return cur.like(res_block(stacked, w.stack_res))


@dataclass
class FusionStep:
    index: int
    keyframe: bool
    submap: BevGrid
    global_feature: BevGrid


def run_fusion(grids, w: FusionWeights, mode: str = "streaming", n_pre: int = 4,
               d_stride: float = 5.0, scheduler: str = "stride", seed: int = 0):
    """Drive KFS fusion over a sequence of local BEV grids.

    Every frame updates the submap; the global feature is recomputed every
    frame, and the global state (streaming) or buffer (stacking) only advances
    on keyframes.

    Returns:
        list[FusionStep]
    """
    if mode not in ("streaming", "stacking"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    rng = np.random.default_rng(seed) if scheduler == "random" else None
    state = KfsState(n_pre=n_pre, d_stride=d_stride, scheduler=scheduler, rng=rng)
    steps = []
    for t, grid in enumerate(grids):
        local_fusion(state, grid, w)
        key = keyframe_step(state, grid.pose, push=False)
        if mode == "streaming":
            g = global_fusion_streaming(state, w, commit=key)
        else:
            g = global_fusion_stacking(state, w)
            if key:
                state.keyframe_buffer.append(state.submap)
        steps.append(FusionStep(t, key, state.submap, g))
    return steps
