"""Binary weight container and Xavier initialization.

File layout (all integers little-endian)::

    magic    4 bytes  b"TDSD"
    version  u32      1
    count    u32      number of records
    record * count:
        name_len u16, name (UTF-8), rank u8, dims u32 * rank,
        values   float32 * prod(dims)

Trailing bytes after the last record are rejected.
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    MissingWeightError,
    ShapeMismatchError,
    TrailingDataError,
    TruncatedFileError,
    UnexpectedWeightError,
    UnsupportedVersionError,
)
from .layers import OPTIONAL_SUFFIXES

MAGIC = b"TDSD"
VERSION = 1

_HEADER = struct.Struct("<4sII")


class WeightStore(dict):
    """Ordered mapping from parameter name to float32 array."""

    def __setitem__(self, key, value):
        if not isinstance(key, str):
            raise TypeError("weight names must be strings")
        # np.array keeps rank 0; ascontiguousarray would promote it to (1,)
        super().__setitem__(key, np.array(value, dtype="<f4", order="C"))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, np.ndarray]) -> "WeightStore":
        store = cls()
        for k, v in mapping.items():
            store[k] = v
        return store

    @property
    def total_values(self) -> int:
        return sum(int(v.size) for v in self.values())

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, len(self))]
        for name, arr in self.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ConfigError(f"weight name too long: {name[:40]}...")
            if arr.ndim > 0xFF:
                raise ConfigError(f"{name}: rank {arr.ndim} not representable")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(arr.astype("<f4", copy=False).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        if len(data) < _HEADER.size:
            raise TruncatedFileError(f"file is {len(data)} bytes, header needs {_HEADER.size}")
        magic, version, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise UnsupportedVersionError(f"unsupported format version {version}")
        pos = _HEADER.size
        store = cls()

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise TruncatedFileError(f"truncated while reading {what} (record {len(store)} of {count})")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(2, "name length"))
            try:
                name = take(name_len, "name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise BadMagicError(f"record name is not valid UTF-8: {exc}") from None
            (rank,) = struct.unpack("<B", take(1, "rank"))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            values = np.frombuffer(take(4 * n, f"values of {name}"), dtype="<f4")
            if name in store:
                raise UnexpectedWeightError(f"duplicate record {name!r}")
            dict.__setitem__(store, name, values.reshape(dims).copy())
        if pos != len(data):
            raise TrailingDataError(f"{len(data) - pos} unexpected bytes after {count} records")
        return store

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _expected_shapes(graph) -> dict[str, tuple[int, ...]]:
    if isinstance(graph, Mapping):
        return dict(graph)
    return graph.param_shapes()


def check_weights(store: Mapping[str, np.ndarray], graph) -> None:
    """Verify ``store`` supplies exactly the parameters ``graph`` needs.

    Batch-norm running statistics are accepted as optional extras.
    """
    expected = _expected_shapes(graph)
    for name, shape in expected.items():
        if name not in store:
            raise MissingWeightError(name)
        if tuple(store[name].shape) != tuple(shape):
            raise ShapeMismatchError(f"{name}: stored shape {tuple(store[name].shape)}, graph expects {tuple(shape)}")
    for name, arr in store.items():
        if name in expected:
            continue
        for suffix in OPTIONAL_SUFFIXES:
            if name.endswith(suffix):
                gamma = name[: -len(suffix)] + ".bn.gamma"
                if gamma in expected:
                    if tuple(arr.shape) != tuple(expected[gamma]):
                        raise ShapeMismatchError(f"{name}: shape {tuple(arr.shape)} != {tuple(expected[gamma])}")
                    break
        else:
            raise UnexpectedWeightError(f"weight {name!r} is not used by the graph")


def load_weights(path, graph) -> WeightStore:
    store = WeightStore.load(path)
    check_weights(store, graph)
    return store


def save_weights(path, store: Mapping[str, np.ndarray]) -> None:
    WeightStore.from_mapping(store).save(path)


def xavier_bound(shape) -> float:
    """Uniform Xavier bound for a conv kernel ``(out, in_per_group, kh, kw)``."""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def rand_init(graph, seed: int = 0, l2_scale: float = 20.0) -> WeightStore:
    """Deterministic initial weights for ``graph``.

    Conv kernels: uniform Xavier; conv biases 0; BN scale 1, shift 0;
    L2-norm scales ``l2_scale``.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for name, shape in _expected_shapes(graph).items():
        if name.endswith(".weight"):
            bound = xavier_bound(shape)
            store[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif name.endswith(".bn.gamma"):
            store[name] = np.ones(shape, np.float32)
        elif name.endswith(".scale"):
            store[name] = np.full(shape, l2_scale, np.float32)
        else:
            store[name] = np.zeros(shape, np.float32)
    return store
