"""DDB backbone: stem followed by four (dense stage, transition) pairs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .blocks import Stage, StageSpec, Stem, Transition, TransitionSpec
from .errors import ConfigError
from .tensor import as_tensor

N_STAGES = 4
# Transitions after stages 0 and 1 halve the resolution.
POOLED_TRANSITIONS = (True, True, False, False)
# Unit names whose outputs feed the pyramid front-end.
TAP_UNITS = ("stage1", "trans3")


@dataclass(frozen=True)
class BackboneConfig:
    growth: tuple[int, ...] = (32, 48, 64, 80)
    repeats: tuple[int, ...] = (4, 6, 6, 6)
    block: str = "ddb-b"
    expand: int | None = None
    transitions: tuple[int, ...] = (128, 128, 256, 64)
    in_channels: int = 3

    def __post_init__(self):
        for key in ("growth", "repeats", "transitions"):
            value = tuple(int(v) for v in getattr(self, key))
            object.__setattr__(self, key, value)
            if len(value) != N_STAGES:
                raise ConfigError(f"{key}: expected {N_STAGES} values, got {len(value)}")
        if any(g < 1 for g in self.growth):
            raise ConfigError(f"growth: every growth rate must be >= 1, got {self.growth}")
        if any(r < 0 for r in self.repeats):
            raise ConfigError(f"repeats: must be >= 0, got {self.repeats}")
        if any(t < 1 for t in self.transitions):
            raise ConfigError(f"transitions: must be >= 1, got {self.transitions}")
        if self.block not in ("ddb-a", "ddb-b"):
            raise ConfigError(f"block: unknown block kind {self.block!r}")
        if self.block == "ddb-a" and (self.expand is None or self.expand < 1):
            raise ConfigError("expand: DDB-a backbones need an integer expand ratio >= 1")
        if self.block == "ddb-b" and self.expand is not None:
            raise ConfigError("expand: only meaningful for DDB-a backbones")


class FeatureTaps(NamedTuple):
    tap38: np.ndarray
    tap19: np.ndarray


@dataclass(frozen=True)
class Backbone:
    config: BackboneConfig
    units: tuple = field(repr=False)

    def walk_units(self, shape):
        """Yield ``(unit, in_shape, out_shape)`` for every unit in order."""
        for unit in self.units:
            out = unit.out_shape(shape)
            yield unit, shape, out
            shape = out

    def tap_shapes(self, shape):
        shapes = {u.name: out for u, _, out in self.walk_units(shape)}
        return tuple(shapes[name] for name in TAP_UNITS)

    @property
    def tap_channels(self) -> tuple[int, int]:
        # channel counts do not depend on resolution
        return tuple(shape[0] for shape in self.tap_shapes((self.config.in_channels, 1, 1)))

    def __call__(self, img, params, record: dict | None = None) -> FeatureTaps:
        x = as_tensor(img, "image")
        taps = {}
        for unit in self.units:
            x = unit(x, params)
            if record is not None:
                record[unit.name] = x.shape
            if unit.name in TAP_UNITS:
                taps[unit.name] = x
        return FeatureTaps(*(taps[name] for name in TAP_UNITS))


def build_backbone(cfg: BackboneConfig | None = None) -> Backbone:
    cfg = cfg or BackboneConfig()
    stem = Stem.build("stem", cfg.in_channels)
    units = [stem]
    c = stem.layers[-2].spec.out_c
    for k in range(N_STAGES):
        spec = StageSpec(cfg.block, cfg.growth[k], cfg.repeats[k], cfg.expand)
        stage = Stage.build(f"stage{k}", spec, c)
        c = spec.out_c(c)
        trans = Transition.build(f"trans{k}", TransitionSpec(c, cfg.transitions[k], POOLED_TRANSITIONS[k]))
        c = cfg.transitions[k]
        units += [stage, trans]
    return Backbone(cfg, tuple(units))


def backbone_forward(graph: Backbone, img, params) -> FeatureTaps:
    return graph(img, params)
