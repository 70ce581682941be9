"""Depthwise feature pyramid front-end.

The downsampling path builds six levels from the two backbone taps; the
reverse path walks back from the smallest level, resampling each merged map
to the next larger level's size, filtering it with a depthwise 3x3 conv and
adding it to that level.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .layers import Conv, Op

N_LEVELS = 6


@dataclass(frozen=True)
class PyramidConfig:
    enabled: bool = True
    channels: int = 128
    levels: int = N_LEVELS

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels: must be >= 1, got {self.channels}")
        if self.levels < 3:
            raise ConfigError(f"levels: need at least 3 pyramid levels, got {self.levels}")


def lateral_layer(name: str, in_c: int, out_c: int = 128) -> Conv:
    return Conv(name, T.ConvSpec.pointwise(in_c, out_c))


@dataclass(frozen=True)
class Downsample:
    """Depthwise 3x3 stride 2 then pointwise conv, both with BN+ReLU.

    A ``valid`` module drops the padding on every axis of length >= 3, which
    turns the last 3x3 level into 1x1.
    """

    name: str
    dw: Conv
    pw: Conv
    valid: bool = False

    @classmethod
    def build(cls, name: str, in_c: int, out_c: int = 128, valid: bool = False) -> "Downsample":
        return cls(
            name,
            Conv(f"{name}.dw", T.ConvSpec.depthwise(in_c, 3, 2, 1)),
            Conv(f"{name}.pw", T.ConvSpec.pointwise(in_c, out_c)),
            valid,
        )

    def _dw_for(self, hw) -> Conv:
        if not self.valid:
            return self.dw
        pad = tuple(0 if n >= 3 else 1 for n in hw)
        return dataclasses.replace(self.dw, spec=dataclasses.replace(self.dw.spec, pad=pad))

    def walk(self, shape):
        dw = self._dw_for(shape[1:])
        mid = dw.out_shape(shape)
        yield dw, shape, mid
        yield self.pw, mid, self.pw.out_shape(mid)

    def out_shape(self, shape):
        *_, (_, _, out) = self.walk(shape)
        return out

    def __call__(self, x, params):
        return self.pw(self._dw_for(x.shape[2:])(x, params), params)


@dataclass(frozen=True)
class Upsample:
    """Bilinear resample to a target size, then depthwise 3x3 + BN (no ReLU)."""

    name: str
    dw: Conv

    @classmethod
    def build(cls, name: str, channels: int = 128) -> "Upsample":
        return cls(name, Conv(f"{name}.dw", T.ConvSpec.depthwise(channels, 3, 1, 1), relu=False))

    def walk(self, shape, target_hw):
        if target_hw[0] < shape[1] or target_hw[1] < shape[2]:
            raise ConfigError(f"{self.name}: target {target_hw} smaller than input {shape[1:]}")
        resized = (shape[0], *target_hw)
        yield Op(f"{self.name}.resize", "resize"), shape, resized
        yield self.dw, resized, self.dw.out_shape(resized)

    def __call__(self, x, target_hw, params):
        spec = T.UpsampleSpec.to_size(x.shape[2:], target_hw)
        return self.dw(T.bilinear_resample(x, spec), params)


@dataclass(frozen=True)
class DFPN:
    config: PyramidConfig
    laterals: tuple
    downs: tuple
    ups: tuple

    title = "D-FPN"
    name = "dfpn"

    @classmethod
    def build(cls, cfg: PyramidConfig, tap_channels) -> "DFPN":
        c = cfg.channels
        laterals = tuple(lateral_layer(f"dfpn.lateral{i}", tc, c) for i, tc in enumerate(tap_channels))
        downs = tuple(
            Downsample.build(f"dfpn.down{k}", c, c, valid=(k == cfg.levels - 1))
            for k in range(len(laterals), cfg.levels)
        )
        ups = tuple(Upsample.build(f"dfpn.up{k}", c) for k in range(cfg.levels - 1)) if cfg.enabled else ()
        return cls(cfg, laterals, downs, ups)

    def walk(self, tap_shapes):
        """Yield ``(layer, in_shape, out_shape)`` for every step, merges included."""
        levels = []
        for lat, shape in zip(self.laterals, tap_shapes):
            out = lat.out_shape(shape)
            yield lat, shape, out
            levels.append(out)
        for down in self.downs:
            steps = list(down.walk(levels[-1]))
            yield from steps
            levels.append(steps[-1][2])
        for k in reversed(range(len(self.ups))):
            steps = list(self.ups[k].walk(levels[k + 1], levels[k][1:]))
            yield from steps
            yield Op(f"dfpn.merge{k}", "add"), levels[k], levels[k]

    def level_shapes(self, tap_shapes):
        levels = [lat.out_shape(s) for lat, s in zip(self.laterals, tap_shapes)]
        for down in self.downs:
            levels.append(down.out_shape(levels[-1]))
        return levels

    def __call__(self, taps, params):
        if len(taps) != len(self.laterals):
            raise ConfigError(f"D-FPN expects {len(self.laterals)} taps, got {len(taps)}")
        levels = [lat(t, params) for lat, t in zip(self.laterals, taps)]
        for down in self.downs:
            levels.append(down(levels[-1], params))
        if not self.ups:
            return levels
        merged = [None] * len(levels)
        merged[-1] = levels[-1]
        for k in reversed(range(len(levels) - 1)):
            top = self.ups[k](merged[k + 1], levels[k].shape[2:], params)
            merged[k] = T.add_elementwise(levels[k], top)
        return merged


def lateral_project(tap, weights, out_c: int = 128, name: str = "lateral"):
    return lateral_layer(name, tap.shape[1], out_c)(tap, weights)


def downsample_module(x, weights, out_c: int = 128, name: str = "down", valid: bool = False):
    return Downsample.build(name, x.shape[1], out_c, valid)(x, weights)


def upsample_module(top, target_hw, weights, name: str = "up"):
    return Upsample.build(name, top.shape[1])(top, tuple(target_hw), weights)


def dfpn_forward(taps, weights, graph: DFPN):
    return graph(taps, weights)
