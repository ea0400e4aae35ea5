"""Run configuration: one flat, diffable ``key = value`` text file.

Each line holds one key and a JSON literal::

    # scene
    W = 20
    x_range = [-3.2, 3.2]
    renderer = "semantic-onehot"
    pillar_span = null

Blank lines and ``#`` comments are ignored.  Unknown keys are errors, so a typo
in a sweep file fails loudly instead of silently running the default.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .geometry import SceneConfig
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # scene lattice and slicing
    x_range: tuple[float, float] = (-3.2, 3.2)
    y_range: tuple[float, float] = (-3.2, 3.2)
    z_range: tuple[float, float] = (-1.28, 1.28)
    W: int = 20
    L: int = 20
    S: int = 4
    N_r3d: int = 4
    C: int = 5
    layers: int = 2
    num_views: int = 8
    H_v: int = 8
    pillar_span: float | None = None
    # synthetic scene
    num_objects: int = 5
    stacking: int = 2
    image_size: tuple[int, int] = (48, 48)
    renderer: str = "semantic-onehot"
    scales: int = 1
    # model
    seed: int = 0
    D: int = 64
    heads: int = 4
    points: int = 4
    block_order: str = "pca_first"
    head_depth: int = 2
    encoder: str = "linear"
    # optimization
    steps: int = 300
    lr: float = 1e-4
    weight_decay: float = 1e-2
    eval_every: int = 50
    presence: str = "gt"
    # outputs
    out: str = "runs/default"

    def __post_init__(self):
        self.x_range = tuple(float(v) for v in self.x_range)
        self.y_range = tuple(float(v) for v in self.y_range)
        self.z_range = tuple(float(v) for v in self.z_range)
        self.image_size = tuple(int(v) for v in self.image_size)

    def validate(self) -> "RunConfig":
        """Raise ConfigError on any inconsistent setting; returns self."""
        try:
            scene = self.scene_config()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if self.H_v % self.S:
            raise ConfigError(f"H_v={self.H_v} must be a multiple of S={self.S}")
        checks = [
            (self.num_objects >= 1, "num_objects must be >= 1"),
            (0 <= self.stacking <= min(self.num_objects, self.C - 1),
             "stacking must lie in [0, min(num_objects, C - 1)]"),
            (len(self.image_size) == 2 and min(self.image_size) >= 2,
             "image_size must be two values >= 2"),
            (self.renderer in ("semantic-onehot", "depth", "learned-toy-encoder"),
             f"unknown renderer {self.renderer!r}"),
            (self.scales >= 1, "scales must be >= 1"),
            (self.D >= 1 and self.heads >= 1 and self.D % self.heads == 0,
             "D must be a positive multiple of heads"),
            (self.points >= 1, "points must be >= 1"),
            (self.block_order in ("pca_first", "ssca_first"),
             f"unknown block_order {self.block_order!r}"),
            (self.head_depth >= 1, "head_depth must be >= 1"),
            (self.encoder in ("linear", "conv"), f"unknown encoder {self.encoder!r}"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
            (self.presence in ("gt", "gt_or_pred"), f"unknown presence {self.presence!r}"),
            (self.C <= 255, "C must be <= 255 to fit the grid file format"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        del scene
        return self

    def scene_config(self) -> SceneConfig:
        return SceneConfig(x_range=self.x_range, y_range=self.y_range, z_range=self.z_range,
                           W=self.W, L=self.L, S=self.S, N_r3d=self.N_r3d, C=self.C,
                           layers=self.layers, num_views=self.num_views, H_v=self.H_v,
                           pillar_span=self.pillar_span)

    def model_config(self) -> ModelConfig:
        channels = {"semantic-onehot": self.C, "depth": 1, "learned-toy-encoder": 3}[self.renderer]
        return ModelConfig(D=self.D, heads=self.heads, points=self.points, in_channels=channels,
                           n_scales=self.scales, block_order=self.block_order,
                           head_depth=self.head_depth, encoder=self.encoder)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        defaults = cls()
        for k, v in d.items():
            _check_type(k, v, getattr(defaults, k))
        return cls(**d)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def dumps(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.to_dict().items())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path


def _check_type(key, value, default):
    number = (int, float)
    if key == "pillar_span":
        ok = value is None or (isinstance(value, number) and not isinstance(value, bool))
    elif isinstance(default, bool) or isinstance(value, bool):
        ok = isinstance(value, bool) and isinstance(default, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, float):
        ok = isinstance(value, number)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:  # pairs
        ok = (isinstance(value, (list, tuple)) and len(value) == len(default)
              and all(isinstance(x, number) and not isinstance(x, bool) for x in value))
    if not ok:
        raise ConfigError(f"{key}: bad value {value!r} (default is {default!r})")


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key.isidentifier():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = json.loads(value.strip())
        except json.JSONDecodeError as err:
            raise ConfigError(f"line {lineno}: value of {key!r} is not a JSON literal") from err
    return RunConfig.from_dict(values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
