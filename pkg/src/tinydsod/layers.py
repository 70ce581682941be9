"""Parameterized layer primitives and helpers for walking layer trees.

A layer knows its parameter names and shapes, its static output shape and
how to run itself against a name -> array mapping. Shapes handled here are
per-sample ``(channels, height, width)`` tuples.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigError, MissingWeightError

BN_EPS = 1e-5

# Running statistics may be supplied but are never required; absent they
# default to mean 0 / variance 1.
OPTIONAL_SUFFIXES = (".bn.mean", ".bn.var")


def _get(params: Mapping[str, np.ndarray], key: str) -> np.ndarray:
    try:
        return params[key]
    except KeyError:
        raise MissingWeightError(key) from None


@dataclass(frozen=True)
class Conv:
    """A convolution optionally followed by batch-norm and ReLU."""

    name: str
    spec: T.ConvSpec
    bn: bool = True
    relu: bool = True

    kind = "conv"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {f"{self.name}.weight": self.spec.weight_shape}
        if self.spec.has_bias:
            shapes[f"{self.name}.bias"] = (self.spec.out_c,)
        if self.bn:
            shapes[f"{self.name}.bn.gamma"] = (self.spec.out_c,)
            shapes[f"{self.name}.bn.beta"] = (self.spec.out_c,)
        return shapes

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.spec.in_c:
            raise ConfigError(f"{self.name}: input has {c} channels, layer expects {self.spec.in_c}")
        return (self.spec.out_c, *self.spec.output_hw(h, w))

    def bn_params(self, params) -> T.BatchNormParams:
        c = self.spec.out_c
        mean = params.get(f"{self.name}.bn.mean")
        var = params.get(f"{self.name}.bn.var")
        return T.BatchNormParams(
            _get(params, f"{self.name}.bn.gamma"),
            _get(params, f"{self.name}.bn.beta"),
            np.zeros(c, T.DTYPE) if mean is None else mean,
            np.ones(c, T.DTYPE) if var is None else var,
            BN_EPS,
        )

    def __call__(self, x, params):
        w = _get(params, f"{self.name}.weight")
        b = _get(params, f"{self.name}.bias") if self.spec.has_bias else None
        y = T.conv2d(x, w, self.spec, b, name=self.name)
        if self.bn:
            y = T.batchnorm(y, self.bn_params(params))
        if self.relu:
            y = T.relu(y)
        return y


@dataclass(frozen=True)
class MaxPool:
    name: str
    kernel: int = 2
    stride: int = 2

    kind = "maxpool"

    def param_shapes(self):
        return {}

    def out_shape(self, shape):
        c, h, w = shape
        return (
            c,
            T.pool_output_size(h, self.kernel, self.stride),
            T.pool_output_size(w, self.kernel, self.stride),
        )

    def __call__(self, x, params):
        return T.maxpool2d_ceil(x, self.kernel, self.stride)


@dataclass(frozen=True)
class L2Norm:
    name: str
    channels: int
    init_scale: float = 20.0

    kind = "l2norm"

    def param_shapes(self):
        return {f"{self.name}.scale": (self.channels,)}

    def out_shape(self, shape):
        if shape[0] != self.channels:
            raise ConfigError(f"{self.name}: input has {shape[0]} channels, expects {self.channels}")
        return tuple(shape)

    def __call__(self, x, params):
        return T.l2norm_channels(x, _get(params, f"{self.name}.scale"))


LAYER_TYPES = (Conv, MaxPool, L2Norm)


def iter_layers(node) -> Iterator:
    """Yield primitive layers of a (nested) dataclass tree in field order."""
    if isinstance(node, LAYER_TYPES):
        yield node
    elif isinstance(node, (tuple, list)):
        for child in node:
            yield from iter_layers(child)
    elif dataclasses.is_dataclass(node) and not isinstance(node, type):
        for f in dataclasses.fields(node):
            yield from iter_layers(getattr(node, f.name))


def map_layers(node, fn: Callable):
    """Return a copy of ``node`` with every primitive layer replaced by ``fn(layer)``."""
    if isinstance(node, LAYER_TYPES):
        return fn(node)
    if isinstance(node, tuple):
        return tuple(map_layers(child, fn) for child in node)
    if dataclasses.is_dataclass(node) and not isinstance(node, type):
        changes = {}
        for f in dataclasses.fields(node):
            value = getattr(node, f.name)
            if isinstance(value, (tuple, *LAYER_TYPES)) or dataclasses.is_dataclass(value):
                changes[f.name] = map_layers(value, fn)
        return dataclasses.replace(node, **changes)
    return node


def param_shapes(node) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in iter_layers(node):
        for key, shape in layer.param_shapes().items():
            if key in shapes:
                raise ConfigError(f"duplicate parameter name {key!r}")
            shapes[key] = shape
    return shapes


def fold_network(node, params: Mapping[str, np.ndarray]):
    """Fold every conv+BN pair of ``node``; returns ``(folded_node, folded_params)``."""
    folded: dict[str, np.ndarray] = {}
    owned = set()

    def fold(layer):
        if not (isinstance(layer, Conv) and layer.bn):
            return layer
        w = _get(params, f"{layer.name}.weight")
        b = params.get(f"{layer.name}.bias") if layer.spec.has_bias else None
        w2, b2 = T.fold_batchnorm(w, b, layer.bn_params(params))
        folded[f"{layer.name}.weight"] = w2
        folded[f"{layer.name}.bias"] = b2
        owned.update(f"{layer.name}{s}" for s in (".bn.gamma", ".bn.beta", *OPTIONAL_SUFFIXES, ".bias"))
        return dataclasses.replace(layer, spec=dataclasses.replace(layer.spec, has_bias=True), bn=False)

    new_node = map_layers(node, fold)
    out = {k: v for k, v in params.items() if k not in owned and k not in folded}
    out.update(folded)
    return new_node, out


@dataclass(frozen=True)
class Op:
    """Parameter-free marker for element-wise steps (resize, add) in layer walks."""

    name: str
    kind: str

    def param_shapes(self):
        return {}
