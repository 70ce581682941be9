"""Stem, depthwise dense blocks, transition layers and dense stages.

Each unit is an immutable dataclass exposing

* ``walk(shape)``: yields ``(layer, in_shape, out_shape)`` for its primitives,
* ``out_shape(shape)``: the unit's output shape,
* ``__call__(x, params)``: the forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .layers import Conv, MaxPool


def _chain(layers, shape):
    for layer in layers:
        out = layer.out_shape(shape)
        yield layer, shape, out
        shape = out


@dataclass(frozen=True)
class DdbASpec:
    g: int
    w: int
    n: int

    def __post_init__(self):
        if self.g < 1 or self.w < 1 or self.n < 1:
            raise ConfigError(f"DDB-a needs g, w, n >= 1, got {self}")

    @property
    def out_c(self):
        return self.n + self.g


@dataclass(frozen=True)
class DdbBSpec:
    g: int
    n: int

    def __post_init__(self):
        if self.g < 1 or self.n < 1:
            raise ConfigError(f"DDB-b needs g, n >= 1, got {self}")

    @property
    def out_c(self):
        return self.n + self.g


@dataclass(frozen=True)
class TransitionSpec:
    in_c: int
    out_c: int
    pool: bool

    def __post_init__(self):
        if self.in_c < 1 or self.out_c < 1:
            raise ConfigError(f"transition channels must be >= 1, got {self}")


@dataclass(frozen=True)
class StageSpec:
    kind: str
    g: int
    repeat: int
    w: int | None = None

    def __post_init__(self):
        if self.kind not in ("ddb-a", "ddb-b"):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.g < 1:
            raise ConfigError(f"growth rate must be >= 1, got {self.g}")
        if self.repeat < 0:
            raise ConfigError(f"repeat must be >= 0, got {self.repeat}")
        if self.kind == "ddb-a" and (self.w is None or self.w < 1):
            raise ConfigError("DDB-a stages need an expand ratio w >= 1")

    def out_c(self, n_in: int) -> int:
        return n_in + self.repeat * self.g


class _Dense:
    """Concatenates the block input with the output of its branch."""

    def branch(self):
        raise NotImplementedError

    def walk(self, shape):
        c, h, w = shape
        if c != self.spec.n:
            raise ConfigError(f"{self.name}: input has {c} channels, block expects {self.spec.n}")
        yield from _chain(self.branch(), shape)

    def out_shape(self, shape):
        return (self.spec.out_c, shape[1], shape[2])

    def __call__(self, x, params):
        if x.shape[1] != self.spec.n:
            raise ConfigError(f"{self.name}: input has {x.shape[1]} channels, block expects {self.spec.n}")
        y = x
        for layer in self.branch():
            y = layer(y, params)
        return T.concat_channels([x, y])


@dataclass(frozen=True)
class DdbA(_Dense):
    """Expand (1x1, n -> w*n), depthwise 3x3, project (1x1, w*n -> g), concat."""

    name: str
    spec: DdbASpec
    pw: Conv
    dw: Conv
    pw2: Conv

    @classmethod
    def build(cls, name: str, spec: DdbASpec) -> "DdbA":
        wide = spec.w * spec.n
        return cls(
            name,
            spec,
            Conv(f"{name}.pw", T.ConvSpec.pointwise(spec.n, wide)),
            Conv(f"{name}.dw", T.ConvSpec.depthwise(wide, 3, 1, 1)),
            Conv(f"{name}.pw2", T.ConvSpec.pointwise(wide, spec.g)),
        )

    def branch(self):
        return (self.pw, self.dw, self.pw2)


@dataclass(frozen=True)
class DdbB(_Dense):
    """Compress (1x1, n -> g), depthwise 3x3, concat."""

    name: str
    spec: DdbBSpec
    pw: Conv
    dw: Conv

    @classmethod
    def build(cls, name: str, spec: DdbBSpec) -> "DdbB":
        return cls(
            name,
            spec,
            Conv(f"{name}.pw", T.ConvSpec.pointwise(spec.n, spec.g)),
            Conv(f"{name}.dw", T.ConvSpec.depthwise(spec.g, 3, 1, 1)),
        )

    def branch(self):
        return (self.pw, self.dw)


@dataclass(frozen=True)
class Stem:
    title = "Stem"

    name: str
    layers: tuple

    @classmethod
    def build(cls, name: str = "stem", in_c: int = 3) -> "Stem":
        return cls(
            name,
            (
                Conv(f"{name}.conv1", T.ConvSpec.standard(in_c, 64, 3, 2, 1)),
                Conv(f"{name}.conv2", T.ConvSpec.pointwise(64, 64)),
                Conv(f"{name}.dw1", T.ConvSpec.depthwise(64, 3, 1, 1)),
                Conv(f"{name}.conv3", T.ConvSpec.pointwise(64, 128)),
                Conv(f"{name}.dw2", T.ConvSpec.depthwise(128, 3, 1, 1)),
                MaxPool(f"{name}.pool"),
            ),
        )

    @property
    def in_c(self):
        return self.layers[0].spec.in_c

    def walk(self, shape):
        if shape[0] != self.in_c:
            raise ConfigError(f"{self.name}: expected {self.in_c} input channels, got {shape[0]}")
        yield from _chain(self.layers, shape)

    def out_shape(self, shape):
        for _, _, shape in self.walk(shape):
            pass
        return shape

    def __call__(self, x, params):
        if x.shape[1] != self.in_c:
            raise ConfigError(f"{self.name}: expected {self.in_c} input channels, got {x.shape[1]}")
        for layer in self.layers:
            x = layer(x, params)
        return x


@dataclass(frozen=True)
class Transition:
    name: str
    spec: TransitionSpec
    conv: Conv
    pool: MaxPool | None

    @classmethod
    def build(cls, name: str, spec: TransitionSpec) -> "Transition":
        conv = Conv(f"{name}.conv", T.ConvSpec.pointwise(spec.in_c, spec.out_c))
        return cls(name, spec, conv, MaxPool(f"{name}.pool") if spec.pool else None)

    @property
    def title(self):
        return f"Transition layer {self.name.removeprefix('trans')}"

    def _layers(self):
        return (self.conv,) if self.pool is None else (self.conv, self.pool)

    def walk(self, shape):
        yield from _chain(self._layers(), shape)

    def out_shape(self, shape):
        for _, _, shape in self.walk(shape):
            pass
        return shape

    def __call__(self, x, params):
        for layer in self._layers():
            x = layer(x, params)
        return x


@dataclass(frozen=True)
class Stage:
    name: str
    spec: StageSpec
    n_in: int
    blocks: tuple

    @classmethod
    def build(cls, name: str, spec: StageSpec, n_in: int) -> "Stage":
        blocks = []
        n = n_in
        for i in range(spec.repeat):
            block_name = f"{name}.block{i}"
            if spec.kind == "ddb-a":
                blocks.append(DdbA.build(block_name, DdbASpec(spec.g, spec.w, n)))
            else:
                blocks.append(DdbB.build(block_name, DdbBSpec(spec.g, n)))
            n += spec.g
        return cls(name, spec, n_in, tuple(blocks))

    @property
    def title(self):
        return f"Dense stage {self.name.removeprefix('stage')}"

    def walk(self, shape):
        for block in self.blocks:
            yield from block.walk(shape)
            shape = block.out_shape(shape)

    def out_shape(self, shape):
        if shape[0] != self.n_in:
            raise ConfigError(f"{self.name}: input has {shape[0]} channels, stage expects {self.n_in}")
        return (self.spec.out_c(self.n_in), shape[1], shape[2])

    def __call__(self, x, params):
        if x.shape[1] != self.n_in:
            raise ConfigError(f"{self.name}: input has {x.shape[1]} channels, stage expects {self.n_in}")
        for block in self.blocks:
            x = block(x, params)
        return x


def ddb_a_forward(x, spec: DdbASpec, weights, name: str = "block"):
    return DdbA.build(name, spec)(x, weights)


def ddb_b_forward(x, spec: DdbBSpec, weights, name: str = "block"):
    return DdbB.build(name, spec)(x, weights)


def stem_forward(x, weights, name: str = "stem"):
    return Stem.build(name)(x, weights)


def transition_forward(x, spec: TransitionSpec, weights, name: str = "trans"):
    return Transition.build(name, spec)(x, weights)


def stage_forward(x, spec: StageSpec, weights, name: str = "stage"):
    return Stage.build(name, spec, x.shape[1])(x, weights)
