"""Run configuration and its flat ``key = value`` text format.

Every field below is a valid key. Architecture widths and head depths are
free choices of this implementation; the loss weights default to
``alpha=2, beta=1, gamma=1, mu=2`` with ``delta`` switching from 0.01 to 1.0
halfway through training.
"""

from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigurationError, ParseError
from .losses import LossWeights


@dataclass(frozen=True)
class PipelineConfig:
    # scene / dataset
    n_points: int = 1024
    n_classes: int = 4  # including background
    n_vertices: int = 512
    n_train: int = 200
    n_test: int = 50
    noise_sigma: float = 0.002
    occlusion_fraction: float = 0.0
    background_fraction: float = 0.2
    max_angle: float = 3.141592653589793
    # architecture
    k: int = 8
    k_coord: int = 16
    sample_ratio: float = 0.5
    coord_width: int = 32
    color_width: int = 32
    feature_width: int = 64
    kp_embed_width: int = 64
    local_widths: tuple = (64, 128, 256)
    agg_width: int = 128
    head_widths: tuple = (128,)
    # optimization
    epochs: int = 40
    max_lr: float = 3e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # losses
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.0
    mu: float = 2.0
    delta_low: float = 0.01
    delta_high: float = 1.0
    delta_switch_epoch: int = -1  # -1: half of ``epochs``
    focal_gamma: float = 2.0
    focal_alpha: float = 1.0
    # evaluation
    max_threshold: float = 0.10
    seed: int = 0

    def __post_init__(self):
        for name in ("n_points", "n_classes", "k", "k_coord", "coord_width", "color_width",
                     "feature_width", "kp_embed_width", "agg_width", "epochs", "n_vertices"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.k >= self.n_points or self.k_coord >= self.n_points:
            raise ConfigurationError("k must be smaller than n_points")
        if not 0 < self.sample_ratio <= 1:
            raise ConfigurationError("sample_ratio must lie in (0, 1]")
        if not self.local_widths or any(w <= 0 for w in self.local_widths):
            raise ConfigurationError("local_widths must be a nonempty list of positive widths")
        object.__setattr__(self, "local_widths", tuple(self.local_widths))
        object.__setattr__(self, "head_widths", tuple(self.head_widths))

    @property
    def switch_epoch(self) -> int:
        return self.delta_switch_epoch if self.delta_switch_epoch >= 0 else self.epochs // 2

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.mu,
                           self.delta_low, self.delta_high, self.switch_epoch)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = ["# posevote run configuration"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str, lineno: int):
    default = getattr(PipelineConfig, name)
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"bad value for {name!r}: {raw!r}", line=lineno) from exc
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, int):
        raise ParseError(f"{name!r} expects an integer, got {raw!r}", line=lineno)
    if isinstance(default, float):
        return float(value)
    return value


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ParseError(f"unknown configuration key {key!r}", line=lineno)
        values[key] = _coerce(key, raw, lineno)
    return replace(base or PipelineConfig(), **values)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(path, config: PipelineConfig) -> None:
    Path(path).write_text(config.to_text(), encoding="utf-8")
