"""JSON interchange: map frame files, BEV grid fixtures and report dumps.

Frame files::

    {"version": "1",
     "extent": {"x_min": -15, "x_max": 15, "y_min": -30, "y_max": 30},
     "frames": [{"timestamp_s": 0.0,
                 "ego_pose": {"x": 0, "y": 0, "yaw": 0},
                 "instances": [{"class": "lane_divider", "closed": false,
                                "score": 1.0, "points": [[x, y], ...]}]}]}

BEV fixture files hold one entry per grid with the array payload stored as
base64 of little-endian float64 values in row-major (H, W, C) order.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .geometry import CLASSES, BevExtent, MapInstance
from .temporal import BevGrid, Pose2

FORMAT_VERSION = "1"

_POSE = {
    "type": "object",
    "properties": {"x": {"type": "number"}, "y": {"type": "number"}, "yaw": {"type": "number"}},
    "required": ["x", "y", "yaw"],
    "additionalProperties": False,
}

FRAME_FILE_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": FORMAT_VERSION},
        "extent": {
            "type": "object",
            "properties": {k: {"type": "number"} for k in ("x_min", "x_max", "y_min", "y_max")},
            "required": ["x_min", "x_max", "y_min", "y_max"],
            "additionalProperties": False,
        },
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "timestamp_s": {"type": "number"},
                    "ego_pose": _POSE,
                    "instances": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "class": {"enum": list(CLASSES)},
                                "closed": {"type": "boolean"},
                                "score": {"type": "number", "minimum": 0, "maximum": 1},
                                "points": {
                                    "type": "array",
                                    "minItems": 2,
                                    "items": {"type": "array", "items": {"type": "number"},
                                              "minItems": 2, "maxItems": 2},
                                },
                            },
                            "required": ["class", "closed", "score", "points"],
                            "additionalProperties": False,
                        },
                    },
                },
                "required": ["timestamp_s", "ego_pose", "instances"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["version", "extent", "frames"],
    "additionalProperties": False,
}

BEV_FILE_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": FORMAT_VERSION},
        "layout": {"const": "row-major H,W,C float64 little-endian base64"},
        "grids": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "timestamp_s": {"type": "number"},
                    "ego_pose": _POSE,
                    "cell_size": {"type": "number", "exclusiveMinimum": 0},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 1},
                              "minItems": 3, "maxItems": 3},
                    "data": {"type": "string"},
                },
                "required": ["timestamp_s", "ego_pose", "cell_size", "shape", "data"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["version", "layout", "grids"],
    "additionalProperties": False,
}


class FormatError(ValueError):
    """Input file does not follow the documented schema."""


@dataclass
class MapFrame:
    timestamp: float = 0.0
    ego_pose: Pose2 = field(default_factory=Pose2)
    instances: list = field(default_factory=list)


def instance_to_dict(inst: MapInstance) -> dict:
    return {"class": inst.class_id, "closed": inst.closed, "score": inst.score,
            "points": inst.points.tolist()}


def frames_to_dict(frames, extent: BevExtent = BevExtent()) -> dict:
    return {
        "version": FORMAT_VERSION,
        "extent": extent.to_dict(),
        "frames": [{"timestamp_s": f.timestamp, "ego_pose": f.ego_pose.to_dict(),
                    "instances": [instance_to_dict(i) for i in f.instances]}
                   for f in frames],
    }


def frames_from_dict(doc: dict):
    """Validate and decode a frame document into ``(frames, extent)``."""
    try:
        jsonschema.validate(doc, FRAME_FILE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise FormatError(f"invalid frame file: {e.message}") from None
    extent = BevExtent(**doc["extent"])
    frames = []
    for f in doc["frames"]:
        insts = [MapInstance(d["class"], d["points"], d["closed"], d["score"])
                 for d in f["instances"]]
        frames.append(MapFrame(f["timestamp_s"], Pose2(**f["ego_pose"]), insts))
    return frames, extent


def dumps(doc) -> str:
    """Canonical JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_frames(path, frames, extent: BevExtent = BevExtent()):
    with open(path, "w") as fh:
        fh.write(dumps(frames_to_dict(frames, extent)))


def load_frames(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not JSON ({e})") from None
    return frames_from_dict(doc)


def encode_array(a) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise FormatError(f"payload has {a.size} values, shape {tuple(shape)} needs {np.prod(shape)}")
    return a.reshape(shape).astype(np.float64)


def grids_to_dict(grids) -> dict:
    return {
        "version": FORMAT_VERSION,
        "layout": BEV_FILE_SCHEMA["properties"]["layout"]["const"],
        "grids": [{"timestamp_s": g.timestamp, "ego_pose": g.pose.to_dict(),
                   "cell_size": g.cell_size, "shape": list(g.shape),
                   "data": encode_array(g.data)} for g in grids],
    }


def grids_from_dict(doc: dict):
    try:
        jsonschema.validate(doc, BEV_FILE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise FormatError(f"invalid BEV fixture: {e.message}") from None
    return [BevGrid(decode_array(g["data"], g["shape"]), g["cell_size"],
                    Pose2(**g["ego_pose"]), g["timestamp_s"]) for g in doc["grids"]]


def save_grids(path, grids):
    with open(path, "w") as fh:
        fh.write(dumps(grids_to_dict(grids)))


def load_grids(path):
    with open(path) as fh:
        return grids_from_dict(json.load(fh))
