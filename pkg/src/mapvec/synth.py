"""Seeded synthetic road scenes: ground-truth maps, trajectories, noisy
predictions and smooth BEV feature fields.

Randomness comes from numpy's PCG64 bit generator seeded through
``numpy.random.default_rng([seed, stream, index])``; every output is a pure
function of the configuration. Stream ids: 1 = prediction perturbation,
2 = BEV fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Polygon, box
from shapely.geometry.polygon import orient

from .geometry import CLASSES, BevExtent, MapInstance, normalize_points
from .io import MapFrame
from .masks import rasterize_instance
from .scores import gcs_p2p
from .temporal import BevGrid, Pose2

TEMPLATES = ("straight", "curve", "intersection")
STREAM_PERTURB = 1
STREAM_BEV = 2


@dataclass
class ScenarioConfig:
    seed: int = 0
    num_frames: int = 10
    road_template: str = "straight"
    lane_count: int = 2
    lane_width: float = 3.5
    step_m: float = 2.0
    frame_dt: float = 0.5
    n_points: int = 20
    crossing_spacing: float = 40.0
    curve_radius: float = 80.0
    sigma: float = 0.2
    sigma_by_class: dict = field(default_factory=dict)
    dropout: float = 0.0
    spurious_rate: float = 0.0
    score_noise: float = 0.02
    bev_channels: int = 4
    bev_height: int = 200
    bev_width: int = 100
    cell_size: float = 0.3
    bump_sigma: float = 1.0
    bev_noise: float = 0.1

    def __post_init__(self):
        if self.road_template not in TEMPLATES:
            raise ValueError(f"unknown road template {self.road_template!r}; "
                             f"choose from {', '.join(TEMPLATES)}")
        sigmas = [self.sigma, *self.sigma_by_class.values()]
        if any(s < 0 for s in sigmas):
            raise ValueError("jitter sigma must be non-negative")
        unknown = set(self.sigma_by_class) - set(CLASSES)
        if unknown:
            raise ValueError(f"unknown classes in sigma_by_class: {sorted(unknown)}")
        for name in ("dropout", "spurious_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lane_count < 1 or self.n_points < 2 or self.num_frames < 1:
            raise ValueError("lane_count, n_points and num_frames must be positive")

    def sigma_for(self, class_id: str) -> float:
        return self.sigma_by_class.get(class_id, self.sigma)

    @property
    def extent(self) -> BevExtent:
        hw = self.bev_width * self.cell_size / 2
        hh = self.bev_height * self.cell_size / 2
        return BevExtent(-hw, hw, -hh, hh)


def _rng(seed, stream, index):
    return np.random.default_rng([seed, stream, index])


# -- world layout -------------------------------------------------------------

def _offsets(cfg):
    return [(k - cfg.lane_count / 2) * cfg.lane_width for k in range(cfg.lane_count + 1)]


def _line_class(k, cfg):
    return "road_boundary" if k in (0, cfg.lane_count) else "lane_divider"


def _world_straight(cfg, length):
    offs = _offsets(cfg)
    y0, y1 = -100.0, length + 100.0
    elems = [(_line_class(k, cfg), LineString([(x, y0), (x, y1)]))
             for k, x in enumerate(offs)]
    yc = cfg.crossing_spacing / 2
    while yc < y1:
        elems.append(("pedestrian_crossing", box(offs[0], yc, offs[-1], yc + 4.0)))
        yc += cfg.crossing_spacing
    return elems


def _arc_point(r_center, theta, lateral):
    # road centre arc turning left around (-R, 0); lateral > 0 is to the right
    r = r_center + lateral
    return (-r_center + r * math.cos(theta), r * math.sin(theta))


def _world_curve(cfg, length):
    R = cfg.curve_radius
    thetas = np.linspace(-100.0 / R, (length + 100.0) / R, 400)
    offs = _offsets(cfg)
    elems = [(_line_class(k, cfg), LineString([_arc_point(R, t, x) for t in thetas]))
             for k, x in enumerate(offs)]
    s = cfg.crossing_spacing / 2
    while s < length + 100.0:
        ts = np.linspace(s / R, (s + 4.0) / R, 5)
        ring = ([_arc_point(R, t, offs[0]) for t in ts]
                + [_arc_point(R, t, offs[-1]) for t in ts[::-1]])
        elems.append(("pedestrian_crossing", Polygon(ring)))
        s += cfg.crossing_spacing
    return elems


def _world_intersection(cfg, length):
    offs = _offsets(cfg)
    half = offs[-1]
    yc = 30.0  # crossing road centre line
    far = 100.0 + length
    elems = []
    for k, x in enumerate(offs):
        cls = _line_class(k, cfg)
        # main road, interrupted by the junction box
        elems.append((cls, LineString([(x, -far), (x, yc - half)])))
        elems.append((cls, LineString([(x, yc + half), (x, far)])))
        # cross road, interrupted the same way
        elems.append((cls, LineString([(-far, yc + x), (-half, yc + x)])))
        elems.append((cls, LineString([(half, yc + x), (far, yc + x)])))
    w = 4.0
    elems += [
        ("pedestrian_crossing", box(-half, yc - half - w, half, yc - half)),
        ("pedestrian_crossing", box(-half, yc + half, half, yc + half + w)),
        ("pedestrian_crossing", box(-half - w, yc - half, -half, yc + half)),
        ("pedestrian_crossing", box(half, yc - half, half + w, yc + half)),
    ]
    return elems


def trajectory(cfg: ScenarioConfig):
    """Ego poses, one per frame, advancing ``step_m`` along the road centre."""
    poses = []
    for t in range(cfg.num_frames):
        s = t * cfg.step_m
        if cfg.road_template == "curve":
            th = s / cfg.curve_radius
            x, y = _arc_point(cfg.curve_radius, th, 0.0)
            poses.append(Pose2(x, y, th))
        else:
            poses.append(Pose2(0.0, s, 0.0))
    return poses


def world_elements(cfg: ScenarioConfig):
    length = cfg.num_frames * cfg.step_m
    builder = {"straight": _world_straight, "curve": _world_curve,
               "intersection": _world_intersection}[cfg.road_template]
    return builder(cfg, length)


# -- resampling -----------------------------------------------------------------

def resample_line(line: LineString, n: int) -> np.ndarray:
    d = np.linspace(0.0, line.length, n)
    return np.array([line.interpolate(x).coords[0] for x in d])


def resample_ring(poly: Polygon, n: int) -> np.ndarray:
    """``n`` points evenly spaced along the counter-clockwise exterior.

    The ring starts at its lexicographically smallest vertex so the output
    does not depend on how the polygon was constructed.
    """
    coords = np.array(orient(poly, 1.0).exterior.coords)[:-1]
    start = min(range(len(coords)), key=lambda i: (coords[i][0], coords[i][1]))
    coords = np.roll(coords, -start, axis=0)
    ring = LineString(np.vstack([coords, coords[:1]]))
    d = np.linspace(0.0, ring.length, n + 1)[:-1]
    return np.array([ring.interpolate(x).coords[0] for x in d])


def _pieces(geom):
    if geom.is_empty:
        return []
    if hasattr(geom, "geoms"):
        return [g for part in geom.geoms for g in _pieces(part)]
    return [geom]


def _to_ego(geom, pose: Pose2):
    inv = pose.inverse()
    if isinstance(geom, Polygon):
        return Polygon(inv.apply(np.array(geom.exterior.coords)))
    return LineString(inv.apply(np.array(geom.coords)))


def frame_instances(elements, pose: Pose2, cfg: ScenarioConfig, min_length=1.0):
    ext = cfg.extent
    clip = box(ext.x_min, ext.y_min, ext.x_max, ext.y_max)
    out = []
    for cls, geom in elements:
        local = _to_ego(geom, pose).intersection(clip)
        for piece in _pieces(local):
            if isinstance(piece, Polygon):
                if piece.area < 0.5:
                    continue
                out.append(MapInstance(cls, resample_ring(piece, cfg.n_points), True, 1.0))
            elif isinstance(piece, LineString) and piece.length >= min_length:
                out.append(MapInstance(cls, resample_line(piece, cfg.n_points), False, 1.0))
    return out


# -- public generators ----------------------------------------------------------

def generate_gt(cfg: ScenarioConfig):
    """Ground-truth MapFrames in the ego frame along the generated trajectory."""
    elements = world_elements(cfg)
    return [MapFrame(t * cfg.frame_dt, pose, frame_instances(elements, pose, cfg))
            for t, pose in enumerate(trajectory(cfg))]


def _spurious(rng, cfg: ScenarioConfig) -> MapInstance:
    ext = cfg.extent
    cls = CLASSES[int(rng.integers(len(CLASSES)))]
    start = rng.uniform(ext.lo, ext.lo + ext.size)
    if cls == "pedestrian_crossing":
        w, h = rng.uniform(2.0, 6.0, 2)
        poly = box(start[0], start[1], start[0] + w, start[1] + h)
        pts = resample_ring(poly, cfg.n_points)
        closed = True
    else:
        ang = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(5.0, 20.0)
        end = start + length * np.array([math.cos(ang), math.sin(ang)])
        pts = resample_line(LineString([start, end]), cfg.n_points)
        closed = False
    return MapInstance(cls, pts, closed, float(rng.uniform(0.0, 0.6)))


def perturb(gt: MapFrame, cfg: ScenarioConfig, rng=None, index: int = 0) -> MapFrame:
    """Noisy predictions for one ground-truth frame.

    Each instance is dropped with probability ``dropout`` or jittered with iid
    Gaussian noise; its score is the point-to-point geometry score against the
    source plus ``score_noise`` Gaussian noise, clipped to [0, 1]. Spurious
    instances are added with probability ``spurious_rate`` per ground truth.
    """
    rng = rng if rng is not None else _rng(cfg.seed, STREAM_PERTURB, index)
    ext = cfg.extent
    preds = []
    for inst in gt.instances:
        drop = rng.random() < cfg.dropout
        noise = rng.normal(0.0, 1.0, inst.points.shape) * cfg.sigma_for(inst.class_id)
        z = rng.normal()
        if drop:
            continue
        pts = inst.points + noise
        s = gcs_p2p(normalize_points(pts, ext), normalize_points(inst.points, ext))
        score = float(np.clip(s + cfg.score_noise * z, 0.0, 1.0))
        preds.append(MapInstance(inst.class_id, pts, inst.closed, score))
    n_spurious = int(rng.binomial(len(gt.instances), cfg.spurious_rate))
    preds += [_spurious(rng, cfg) for _ in range(n_spurious)]
    return MapFrame(gt.timestamp, gt.ego_pose, preds)


def generate_predictions(gt_frames, cfg: ScenarioConfig):
    return [perturb(f, cfg, index=t) for t, f in enumerate(gt_frames)]


def generate_bev(frame: MapFrame, cfg: ScenarioConfig, seed: int = None, index: int = 0) -> BevGrid:
    """Smooth synthetic BEV feature grid for one frame.

    Channel 0 is the rasterized occupancy of all map elements. Every other
    channel is a sum of Gaussian bumps on the element points, scaled by a
    per-channel gain, plus a few low-frequency cosine waves of amplitude
    ``bev_noise``.
    """
    seed = cfg.seed if seed is None else seed
    rng = _rng(seed, STREAM_BEV, index)
    h, w, c = cfg.bev_height, cfg.bev_width, cfg.bev_channels
    ext = cfg.extent
    data = np.zeros((h, w, c))
    occ = np.zeros((h, w), dtype=bool)
    for inst in frame.instances:
        occ |= rasterize_instance(inst, ext, h, w)
    data[..., 0] = occ

    xs = ext.x_min + (np.arange(w) + 0.5) * cfg.cell_size
    ys = ext.y_min + (np.arange(h) + 0.5) * cfg.cell_size
    pts = (np.concatenate([i.points for i in frame.instances])
           if frame.instances else np.zeros((0, 2)))
    bumps = np.zeros((h, w))
    for px, py in pts:
        gx = np.exp(-0.5 * ((xs - px) / cfg.bump_sigma) ** 2)
        gy = np.exp(-0.5 * ((ys - py) / cfg.bump_sigma) ** 2)
        bumps += np.outer(gy, gx)
    gx, gy = np.meshgrid(xs, ys)
    for ch in range(1, c):
        gain = rng.uniform(0.5, 1.5)
        field_ = gain * bumps
        for _ in range(3):
            kx, ky = rng.uniform(-0.15, 0.15, 2)
            phase = rng.uniform(0, 2 * math.pi)
            field_ += cfg.bev_noise * np.cos(kx * gx + ky * gy + phase)
        data[..., ch] = field_
    return BevGrid(data, cfg.cell_size, frame.ego_pose, frame.timestamp)


def generate_scenario(cfg: ScenarioConfig):
    """Ground truth, predictions and BEV grids for a whole scenario."""
    gt = generate_gt(cfg)
    preds = generate_predictions(gt, cfg)
    grids = [generate_bev(f, cfg, index=t) for t, f in enumerate(gt)]
    return gt, preds, grids
