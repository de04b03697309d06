"""Run configuration: strict JSON with every tracking and eval knob.

Unknown keys are rejected rather than ignored, so typos in a config file
fail loudly instead of silently running with defaults.
"""

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import ukf
from .errors import ConfigError
from .metrics import RoiSet
from .tracker import TrackingConfig


@dataclass
class RunConfig:
    model: str = "bingham"
    rank: int = 2
    step_mm: float = 0.5
    seeds_per_point: int = 3
    wm_threshold: float = 0.4
    max_angle_deg: float = 60.0
    max_steps: int = 2000
    min_length_mm: float = 10.0
    bidirectional: bool = False
    q: list = None               # 6 process-noise diagonals; None = default
    r: float = 0.02
    rng_seed: int = 0
    min_visits: int = 2
    max_low_frac: float = 0.3
    rois: RoiSet = field(default_factory=RoiSet)
    field_file: str = None
    seeds_file: str = None
    lut_file: str = None
    output_tsl: str = None
    report_file: str = None

    def __post_init__(self):
        if self.model not in ukf.MODELS:
            raise ConfigError("unknown model %r" % self.model)
        positive = {"rank": self.rank, "step_mm": self.step_mm,
                    "seeds_per_point": self.seeds_per_point,
                    "max_steps": self.max_steps, "r": self.r,
                    "min_visits": self.min_visits}
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError("%s must be positive" % name)
        if not 0.0 <= self.wm_threshold <= 1.0:
            raise ConfigError("wm_threshold must lie in [0, 1]")
        if not 0.0 < self.max_angle_deg <= 90.0:
            raise ConfigError("max_angle_deg must lie in (0, 90]")
        if self.min_length_mm < 0 or self.max_low_frac < 0:
            raise ConfigError("lengths and fractions must be nonnegative")
        if self.q is not None:
            q = np.asarray(self.q, float)
            if q.shape != (ukf.STATE_DIM,) or np.any(q < 0):
                raise ConfigError("q must hold 6 nonnegative entries")

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("malformed config JSON: %s" % exc) from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("unknown config keys: %s"
                              % ", ".join(sorted(unknown)))
        if "rois" in data:
            data = dict(data, rois=RoiSet.from_dict(data["rois"]))
        return cls(**data)

    def tracking(self):
        q = None if self.q is None else np.asarray(self.q, float)
        return TrackingConfig(
            model=self.model, rank=self.rank, step_mm=self.step_mm,
            seeds_per_point=self.seeds_per_point,
            wm_threshold=self.wm_threshold,
            max_angle_deg=self.max_angle_deg, max_steps=self.max_steps,
            min_length_mm=self.min_length_mm,
            bidirectional=self.bidirectional, q=q, r=self.r)
