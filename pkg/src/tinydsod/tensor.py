"""NCHW float32 kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 with four
dimensions ``(batch, channels, height, width)``. Every kernel is a pure
function: inputs are never modified in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidParametersError

DTYPE = np.float32

STANDARD = "standard"
DEPTHWISE = "depthwise"
POINTWISE = "pointwise"
_KINDS = (STANDARD, DEPTHWISE, POINTWISE)


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Validate ``x`` as a 4-D tensor and return it as contiguous float32."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise ConfigError(f"{name}: expected a 4-D NCHW tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ConfigError(f"{name}: all dimensions must be >= 1, got {arr.shape}")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """Floor-mode convolution output length along one axis."""
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ConfigError(
            f"convolution of length {size} with kernel {kernel}, pad {pad} is empty"
        )
    return out


def pool_output_size(size: int, kernel: int = 2, stride: int = 2) -> int:
    """Ceil-mode pooling output length along one axis."""
    return max(1, math.ceil((size - kernel) / stride) + 1)


@dataclass(frozen=True)
class ConvSpec:
    kind: str
    in_c: int
    out_c: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    pad: tuple[int, int] = (0, 0)
    has_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "pad", _pair(self.pad))
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown convolution kind {self.kind!r}")
        if self.in_c < 1 or self.out_c < 1:
            raise ConfigError(f"channel counts must be >= 1, got {self.in_c}->{self.out_c}")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.pad) < 0:
            raise ConfigError(f"invalid kernel/stride/pad in {self}")
        if self.kind == DEPTHWISE and self.out_c != self.in_c:
            raise ConfigError("depthwise convolution requires out_c == in_c")
        if self.kind == POINTWISE and (self.kernel != (1, 1) or self.pad != (0, 0)):
            raise ConfigError("pointwise convolution requires kernel (1, 1) and pad (0, 0)")

    @classmethod
    def standard(cls, in_c, out_c, kernel=3, stride=1, pad=None, has_bias=False):
        k = _pair(kernel)
        if pad is None:
            pad = (k[0] // 2, k[1] // 2)
        return cls(STANDARD, in_c, out_c, k, stride, pad, has_bias)

    @classmethod
    def depthwise(cls, c, kernel=3, stride=1, pad=None, has_bias=False):
        k = _pair(kernel)
        if pad is None:
            pad = (k[0] // 2, k[1] // 2)
        return cls(DEPTHWISE, c, c, k, stride, pad, has_bias)

    @classmethod
    def pointwise(cls, in_c, out_c, has_bias=False):
        return cls(POINTWISE, in_c, out_c, has_bias=has_bias)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        in_per_group = 1 if self.kind == DEPTHWISE else self.in_c
        return (self.out_c, in_per_group, *self.kernel)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            conv_output_size(h, self.kernel[0], self.stride[0], self.pad[0]),
            conv_output_size(w, self.kernel[1], self.stride[1], self.pad[1]),
        )


@dataclass(frozen=True)
class UpsampleSpec:
    """Resampling coefficients (input coords per output coord) and target size."""

    scale: tuple[float, float]
    out_size: tuple[int, int]

    @classmethod
    def to_size(cls, in_hw, out_hw) -> "UpsampleSpec":
        (hi, wi), (ho, wo) = in_hw, out_hw
        return cls((hi / ho, wi / wo), (int(ho), int(wo)))


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = len(self.gamma)
        if not (len(self.beta) == len(self.mean) == len(self.var) == n):
            raise ConfigError("batch-norm arrays must share one channel count")
        if self.eps <= 0:
            raise InvalidParametersError(f"batch-norm epsilon must be > 0, got {self.eps}")
        if np.any(np.asarray(self.var) < 0):
            raise InvalidParametersError("batch-norm variance must be >= 0")

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            np.ones(channels, DTYPE),
            np.zeros(channels, DTYPE),
            np.zeros(channels, DTYPE),
            np.ones(channels, DTYPE),
            eps,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)


def _check_conv(x, w, spec: ConvSpec, name: str):
    x = as_tensor(x, name)
    w = np.asarray(w, dtype=DTYPE)
    if x.shape[1] != spec.in_c:
        raise ConfigError(f"{name}: input has {x.shape[1]} channels, layer expects {spec.in_c}")
    if w.shape != spec.weight_shape:
        raise ConfigError(f"{name}: kernel shape {w.shape} != expected {spec.weight_shape}")
    return x, w


def _padded(x: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    ph, pw = pad
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _taps(xp: np.ndarray, spec: ConvSpec, oh: int, ow: int):
    sh, sw = spec.stride
    kh, kw = spec.kernel
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[:, :, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw]


def _add_bias(out, bias, spec: ConvSpec, name: str):
    if bias is None:
        return out
    bias = np.asarray(bias, dtype=DTYPE)
    if bias.shape != (spec.out_c,):
        raise ConfigError(f"{name}: bias shape {bias.shape} != ({spec.out_c},)")
    return out + bias[None, :, None, None]


def conv2d(x, w, spec: ConvSpec, bias=None, name: str = "conv2d") -> np.ndarray:
    """Zero-padded cross-correlation with floor-mode output sizing.

    Accumulates one channel-contracting matmul per kernel tap, in row-major
    tap order.
    """
    if spec.kind == DEPTHWISE:
        return dwconv2d(x, w, spec, bias, name)
    x, w = _check_conv(x, w, spec, name)
    n, _, h, wd = x.shape
    oh, ow = spec.output_hw(h, wd)
    xp = _padded(x, spec.pad)
    out = np.zeros((n, spec.out_c, oh, ow), DTYPE)
    for i, j, patch in _taps(xp, spec, oh, ow):
        # (O, C) x (N, C, oh*ow) -> (N, O, oh*ow)
        flat = patch.reshape(n, spec.in_c, oh * ow)
        out += np.matmul(w[:, :, i, j], flat).reshape(n, spec.out_c, oh, ow)
    return _add_bias(out, bias, spec, name)


def dwconv2d(x, w, spec: ConvSpec, bias=None, name: str = "dwconv2d") -> np.ndarray:
    """Depthwise convolution: output channel c only sees input channel c."""
    if spec.kind != DEPTHWISE:
        raise ConfigError(f"{name}: dwconv2d requires a depthwise spec, got {spec.kind}")
    x, w = _check_conv(x, w, spec, name)
    n, c, h, wd = x.shape
    oh, ow = spec.output_hw(h, wd)
    xp = _padded(x, spec.pad)
    out = np.zeros((n, c, oh, ow), DTYPE)
    for i, j, patch in _taps(xp, spec, oh, ow):
        out += patch * w[:, 0, i, j][None, :, None, None]
    return _add_bias(out, bias, spec, name)


def maxpool2d_ceil(x, kernel: int = 2, stride: int = 2) -> np.ndarray:
    """Ceil-mode max pooling; trailing partial windows use the available elements."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    oh, ow = pool_output_size(h, kernel, stride), pool_output_size(w, kernel, stride)
    eh = max(0, (oh - 1) * stride + kernel - h)
    ew = max(0, (ow - 1) * stride + kernel - w)
    xp = np.pad(x, ((0, 0), (0, 0), (0, eh), (0, ew)), constant_values=-np.inf)
    out = np.full((n, c, oh, ow), -np.inf, DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            win = xp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]
            np.maximum(out, win, out=out)
    return out


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), DTYPE(0))


def batchnorm(x, bn: BatchNormParams) -> np.ndarray:
    """Inference-mode batch normalization over the channel axis."""
    x = as_tensor(x)
    if x.shape[1] != bn.channels:
        raise ConfigError(f"batch-norm has {bn.channels} channels, input has {x.shape[1]}")
    scale = np.asarray(bn.gamma, DTYPE) / np.sqrt(np.asarray(bn.var, DTYPE) + DTYPE(bn.eps))
    shift = np.asarray(bn.beta, DTYPE) - np.asarray(bn.mean, DTYPE) * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def fold_batchnorm(w, b, bn: BatchNormParams) -> tuple[np.ndarray, np.ndarray]:
    """Merge an inference batch-norm into the preceding convolution.

    ``w`` is indexed by output channel on its first axis. A missing bias is
    treated as zeros; the returned bias is always materialized.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(np.asarray(bn.var) < 0):
        raise InvalidParametersError("batch-norm variance must be >= 0")
    if w.shape[0] != bn.channels:
        raise ConfigError(f"batch-norm has {bn.channels} channels, kernel has {w.shape[0]} outputs")
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    scale = np.asarray(bn.gamma, np.float64) / np.sqrt(np.asarray(bn.var, np.float64) + bn.eps)
    w_folded = w * scale.reshape(-1, *([1] * (w.ndim - 1)))
    b_folded = np.asarray(bn.beta, np.float64) + (b - np.asarray(bn.mean, np.float64)) * scale
    return w_folded.astype(DTYPE), b_folded.astype(DTYPE)


def tau(a, b):
    """Bilinear interpolation kernel max(0, 1 - |a - b|)."""
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)))


def _resample_matrix(n_in: int, n_out: int, s: float) -> np.ndarray:
    # row t holds tau(m, s*t) for every input coordinate m
    m = np.arange(n_in)[None, :]
    t = np.arange(n_out)[:, None] * s
    return tau(m, t).astype(DTYPE)


def bilinear_resample(x, spec: UpsampleSpec) -> np.ndarray:
    """Sum of input values weighted by tau(m, s*x) * tau(n, s*y) over the input grid.

    No border renormalization: output coordinates that map beyond the last
    input row/column only receive the partial weight that falls inside.
    """
    x = as_tensor(x)
    ho, wo = spec.out_size
    if ho < 1 or wo < 1:
        raise ConfigError(f"resample target must be >= 1 per axis, got {spec.out_size}")
    a_h = _resample_matrix(x.shape[2], ho, spec.scale[0])
    a_w = _resample_matrix(x.shape[3], wo, spec.scale[1])
    return np.matmul(np.matmul(a_h, x), a_w.T)


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    if not xs:
        raise ConfigError("concat_channels needs at least one tensor")
    xs = [as_tensor(x) for x in xs]
    n, _, h, w = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != n or x.shape[2:] != (h, w):
            raise ConfigError(f"cannot concatenate {xs[0].shape} with {x.shape}")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=1)


def add_elementwise(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ConfigError(f"element-wise add of mismatched shapes {a.shape} and {b.shape}")
    return a + b


def l2norm_channels(x, scale, eps: float = 1e-10) -> np.ndarray:
    x = as_tensor(x)
    scale = np.asarray(scale, DTYPE)
    if scale.shape != (x.shape[1],):
        raise ConfigError(f"L2-norm scale has shape {scale.shape}, input has {x.shape[1]} channels")
    norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True) + DTYPE(eps))
    return x / norm * scale[None, :, None, None]
