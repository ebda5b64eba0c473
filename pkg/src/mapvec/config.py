"""Run configuration: one JSON document with a section per component.

Every default is the published setting where one exists. Unknown sections or
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .evaluation import EvalConfig
from .geometry import BevExtent
from .relation import SpeConfig
from .scores import FocalParams, GcsConfig, LossWeights
from .synth import ScenarioConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MatcherConfig:
    w_cls: float = 2.0
    w_pts: float = 4.0
    w_dir: float = 0.0


@dataclass(frozen=True)
class KfsConfig:
    n_pre: int = 4
    d_stride: float = 5.0
    kernel: int = 1
    weight_seed: int = 0
    scheduler: str = "stride"

    def __post_init__(self):
        if self.n_pre < 1 or self.d_stride < 0:
            raise ValueError("n_pre must be >= 1 and d_stride >= 0")
        if self.kernel not in (1, 3):
            raise ValueError("gate kernel must be 1 or 3")
        if self.scheduler not in ("stride", "random"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")


@dataclass(frozen=True)
class GradcheckConfig:
    step: float = 1e-5
    sweep: tuple = (1e-4, 1e-5, 1e-6)
    tolerance: float = 1e-4
    grid: tuple = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass
class RunConfig:
    focal: FocalParams = field(default_factory=FocalParams)
    gcs: GcsConfig = field(default_factory=GcsConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    kfs: KfsConfig = field(default_factory=KfsConfig)
    spe: SpeConfig = field(default_factory=SpeConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(doc) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, body in doc.items():
            kwargs[name] = _build(sections[name].default_factory, body, name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _build(kind, body, where):
    if not isinstance(body, dict):
        raise ConfigError(f"section {where!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(kind)}
    unknown = set(body) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    body = dict(body)
    if kind is EvalConfig:
        if "extent" in body:
            body["extent"] = BevExtent(**body["extent"])
        for key in ("thresholds", "classes"):
            if key in body:
                body[key] = tuple(body[key])
    if kind is GradcheckConfig:
        body = {k: tuple(v) if isinstance(v, list) else v for k, v in body.items()}
    try:
        return kind(**body)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {where!r}: {e}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not JSON ({e})") from None
    return RunConfig.from_dict(doc)
