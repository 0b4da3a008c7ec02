"""Run configuration: model dims, query counts, loss weights, data shape, flags."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

PRECISIONS = ("f32", "f64")
POOL_SCOPES = ("global", "per_track")
SCENE_MODES = ("mixed", "appearance_twin", "motion_twin")


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


@dataclass
class RunConfig:
    # model widths
    c: int = 64          # visual token width
    d: int = 64          # text embedding width
    c1: int = 16         # pixel-embedding channels
    # query counts and selection size
    n_a: int = 16
    n_i: int = 8
    n_e: int = 8
    k: int = 8
    window: int = 3
    # loss weights and optimizer
    lambda_v: float = 1.0
    lambda_f: float = 1.0
    lambda_con: float = 0.5
    lr: float = 5e-5
    weight_decay: float = 1e-4
    steps: int = 500
    # reproducibility and numerics
    seed: int = 0
    precision: str = "f32"
    # behavior flags
    scale_logits: bool = True
    pool_scope: str = "global"
    consistency_mean_over_t: bool = False  # divide by T instead of T-1
    use_iia: bool = True
    use_ima: bool = True
    use_traj: bool = True
    use_rpe: bool = True
    # clip / scene shape
    frames: int = 8
    height: int = 64
    width: int = 64
    n_objects: int = 3
    # text
    vocab_size: int = 4096
    max_words: int = 24
    # scene generation mix
    mode_weights: dict = field(
        default_factory=lambda: {"mixed": 1.0, "appearance_twin": 1.0, "motion_twin": 1.0}
    )

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.c >= 4 and self.d >= 4 and self.c1 >= 2, "widths too small")
        need(self.n_a >= 2 and self.n_i >= 1 and self.n_e >= 1, "query counts must be positive (n_a >= 2)")
        need(self.k >= 1, "k must be >= 1")
        need(self.window >= 1 and self.window % 2 == 1, "window must be odd and >= 1")
        need(self.precision in PRECISIONS, f"precision must be one of {PRECISIONS}")
        need(self.pool_scope in POOL_SCOPES, f"pool_scope must be one of {POOL_SCOPES}")
        need(self.lambda_v >= 0 and self.lambda_f >= 0 and self.lambda_con >= 0, "loss weights must be >= 0")
        need(self.lr >= 0, "lr must be >= 0")
        need(self.steps >= 0, "steps must be >= 0")
        need(self.frames >= 1, "frames must be >= 1")
        need(self.height % 4 == 0 and self.width % 4 == 0, "height/width must be multiples of 4")
        need(self.height >= 8 and self.width >= 8, "frame size too small")
        need(2 <= self.n_objects <= 6, "n_objects must be in [2, 6]")
        need(self.vocab_size >= 8, "vocab_size too small")
        need(self.max_words >= 4, "max_words too small")
        need(
            set(self.mode_weights) <= set(SCENE_MODES) and len(self.mode_weights) > 0,
            f"mode_weights keys must be among {SCENE_MODES}",
        )
        need(all(w >= 0 for w in self.mode_weights.values()), "mode weights must be >= 0")
        need(sum(self.mode_weights.values()) > 0, "mode weights must not all be zero")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc).validate()

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw).validate()
