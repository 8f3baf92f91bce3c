"""Training configuration: every schedule constant, learning rate and loss weight."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised for an invalid or unparseable training configuration."""


@dataclass
class TrainConfig:
    """All knobs of the optimizer, schedules and rasterizer in one serializable record.

    Learning rates follow the usual splatting setup: the position rate decays
    geometrically from ``lr_position`` to ``lr_position_final`` over
    ``total_steps``; rotation and the motion-curve block get flat rates.
    ``weight_decay`` is applied to *all* unfrozen parameters each step,
    including the per-point time dilation pair (which therefore drifts very
    slowly toward 0; at 8e-7 this is far below the optimizer's own noise).
    """

    # learning rates
    lr_position: float = 4e-4
    lr_position_final: float = 8e-7
    lr_rotation: float = 2e-3
    lr_dddm: float = 4e-4          # curve coefficients and time dilation
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    weight_decay: float = 8e-7

    # schedule
    total_steps: int = 30000
    warmup_static_steps: int = 2000
    densify_end: int = 15000
    knn_rigid_start: int = 0       # iterations after densify_end before the rigid loss starts
    alt_cadence: int = 0           # >0: interleave densify / frozen stages at this cadence

    # model shape
    poly_order: int = 3            # polynomial order of each deformation curve
    fourier_order: int = 16        # number of harmonics of each deformation curve
    sh_degree: int = 3

    # losses
    w_ssim: float = 0.2
    w_tsmooth: float = 0.05
    w_rigid: float = 0.05
    knn_k: int = 8

    # adaptive density control
    # Densification waits for the warm-up to end: while curves are frozen a
    # dynamic scene cannot be fit, and cloning against that residual only
    # multiplies points that model motion as geometry.
    densify_start: int = 2000
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    densify_split_extent_frac: float = 0.01
    split_scale_shrink: float = 1.6
    prune_opacity: float = 0.005

    # rasterizer constants
    alpha_clamp: float = 0.99
    covariance_dilation: float = 0.3
    stop_transmittance: float = 1e-4
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    # bookkeeping
    seed: int = 0
    checkpoint_interval: int = 0   # 0: write only the final checkpoint

    def validate(self) -> None:
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not (0 <= self.warmup_static_steps <= self.densify_end):
            raise ConfigError("need 0 <= warmup_static_steps <= densify_end")
        for name in ("lr_position", "lr_position_final", "lr_rotation", "lr_dddm",
                     "lr_scale", "lr_opacity", "lr_sh_dc", "lr_sh_rest"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.poly_order < 0 or self.fourier_order < 0:
            raise ConfigError("curve orders must be >= 0")
        if self.sh_degree < 0 or self.sh_degree > 3:
            raise ConfigError("sh_degree must be in 0..3")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if not (0.0 < self.alpha_clamp <= 1.0):
            raise ConfigError("alpha_clamp must be in (0, 1]")
        if len(self.background) != 3 or any(not (0.0 <= c <= 1.0) for c in self.background):
            raise ConfigError("background must be three values in [0, 1]")

    def position_lr(self, iteration: int) -> float:
        """Geometric interpolation from lr_position to lr_position_final."""
        if self.total_steps <= 0:
            return self.lr_position
        frac = min(max(iteration / self.total_steps, 0.0), 1.0)
        return self.lr_position * (self.lr_position_final / self.lr_position) ** frac

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["background"] = list(self.background)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "background" in d:
            d["background"] = tuple(d["background"])
        cfg = cls(**d)
        cfg.validate()
        return cfg
