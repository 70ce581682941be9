"""Single-shot multibox head: default boxes, predictors, decoding and NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import Conv, L2Norm

# Aspect ratios added pairwise (r, 1/r) beyond the two square boxes.
_EXTRA_RATIOS = (2.0, 3.0)


@dataclass(frozen=True)
class HeadConfig:
    categories: int = 21
    boxes: tuple[int, ...] = (4, 6, 6, 6, 4, 4)
    s_min: float = 0.2
    s_max: float = 0.9
    variances: tuple[float, float, float, float] = (0.1, 0.1, 0.2, 0.2)
    conf_thresh: float = 0.01
    nms_iou: float = 0.45
    topk: int = 200
    pre_nms_topk: int = 400
    clip: bool = True
    l2_scale: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(int(b) for b in self.boxes))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if self.categories < 2:
            raise ConfigError(f"categories: need >= 2 (background included), got {self.categories}")
        for b in self.boxes:
            if b not in (2, 4, 6):
                raise ConfigError(f"boxes: per-level box count must be 2, 4 or 6, got {b}")
        if not 0 < self.s_min < self.s_max <= 1:
            raise ConfigError(f"scales: need 0 < s_min < s_max <= 1, got {self.s_min}, {self.s_max}")
        if not 0 <= self.conf_thresh <= 1:
            raise ConfigError(f"conf_thresh: must lie in [0, 1], got {self.conf_thresh}")
        if not 0 <= self.nms_iou <= 1:
            raise ConfigError(f"nms_iou: must lie in [0, 1], got {self.nms_iou}")
        if self.topk < 1 or self.pre_nms_topk < 1:
            raise ConfigError("topk: must be >= 1")

    def scales(self) -> list[float]:
        m = len(self.boxes)
        step = (self.s_max - self.s_min) / (m - 1) if m > 1 else 0.0
        # one extra scale past s_max sizes the last level's second square box
        return [self.s_min + step * k for k in range(m + 1)]


class PriorBox(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float


@dataclass(frozen=True)
class Detection:
    category: int
    score: float
    box: tuple[float, float, float, float]

    def format(self) -> str:
        return f"{self.category} {self.score:.6f} " + " ".join(f"{v:.6f}" for v in self.box)


def _level_box_sizes(s_k: float, s_next: float, n_boxes: int, clip: bool):
    sizes = [(s_k, s_k), (math.sqrt(s_k * s_next),) * 2]
    for r in _EXTRA_RATIOS[: (n_boxes - 2) // 2]:
        sr = math.sqrt(r)
        sizes += [(s_k * sr, s_k / sr), (s_k / sr, s_k * sr)]
    if clip:
        sizes = [(min(w, 1.0), min(h, 1.0)) for w, h in sizes]
    return sizes


def gen_priors(cfg: HeadConfig, level_sizes: Sequence) -> np.ndarray:
    """Default boxes as a ``(P, 4)`` float32 array of ``(cx, cy, w, h)`` rows.

    ``level_sizes`` holds one ``f`` or ``(f_h, f_w)`` per level. Order is
    level-major, then row-major over cells, then the fixed ratio order
    ``1, sqrt(s_k s_k+1), 2, 1/2, 3, 1/3``.
    """
    if len(level_sizes) != len(cfg.boxes):
        raise ConfigError(f"{len(level_sizes)} levels given, head config has {len(cfg.boxes)}")
    scales = cfg.scales()
    out = []
    for k, size in enumerate(level_sizes):
        fh, fw = (size, size) if np.isscalar(size) else size
        sizes = np.array(_level_box_sizes(scales[k], scales[k + 1], cfg.boxes[k], cfg.clip))
        cy, cx = np.meshgrid((np.arange(fh) + 0.5) / fh, (np.arange(fw) + 0.5) / fw, indexing="ij")
        centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
        level = np.empty((fh * fw, len(sizes), 4))
        level[:, :, :2] = centers[:, None, :]
        level[:, :, 2:] = sizes[None, :, :]
        out.append(level.reshape(-1, 4))
    return np.concatenate(out).astype(T.DTYPE)


@dataclass(frozen=True)
class Predictor:
    """Depthwise 3x3 (BN+ReLU) followed by a biased pointwise projection."""

    name: str
    dw: Conv
    pw: Conv

    @classmethod
    def build(cls, name: str, in_c: int, out_c: int) -> "Predictor":
        return cls(
            name,
            Conv(f"{name}.dw", T.ConvSpec.depthwise(in_c, 3, 1, 1)),
            Conv(f"{name}.pw", T.ConvSpec.pointwise(in_c, out_c, has_bias=True), bn=False, relu=False),
        )

    def walk(self, shape):
        mid = self.dw.out_shape(shape)
        yield self.dw, shape, mid
        yield self.pw, mid, self.pw.out_shape(mid)

    def __call__(self, x, params):
        return self.pw(self.dw(x, params), params)


@dataclass(frozen=True)
class HeadLevel:
    norm: L2Norm
    loc: Predictor
    conf: Predictor
    boxes: int


@dataclass(frozen=True)
class Head:
    config: HeadConfig
    levels: tuple

    title = "Head"
    name = "head"

    @classmethod
    def build(cls, cfg: HeadConfig, level_channels: Sequence[int]) -> "Head":
        if len(level_channels) != len(cfg.boxes):
            raise ConfigError(f"head has {len(cfg.boxes)} box counts for {len(level_channels)} levels")
        levels = []
        for k, (c, b) in enumerate(zip(level_channels, cfg.boxes)):
            name = f"head.level{k}"
            levels.append(
                HeadLevel(
                    L2Norm(f"{name}.norm", c, cfg.l2_scale),
                    Predictor.build(f"{name}.loc", c, 4 * b),
                    Predictor.build(f"{name}.conf", c, cfg.categories * b),
                    b,
                )
            )
        return cls(cfg, tuple(levels))

    def walk(self, level_shapes):
        for level, shape in zip(self.levels, level_shapes):
            yield level.norm, shape, level.norm.out_shape(shape)
            yield from level.loc.walk(shape)
            yield from level.conf.walk(shape)

    def __call__(self, pyramid, params):
        if len(pyramid) != len(self.levels):
            raise ConfigError(f"head expects {len(self.levels)} levels, got {len(pyramid)}")
        locs, confs = [], []
        n = pyramid[0].shape[0]
        c = self.config.categories
        for level, x in zip(self.levels, pyramid):
            x = level.norm(x, params)
            # (N, b*k, H, W) -> (N, H, W, b*k) keeps priors cell-major, box-minor
            loc = level.loc(x, params).transpose(0, 2, 3, 1)
            conf = level.conf(x, params).transpose(0, 2, 3, 1)
            locs.append(loc.reshape(n, -1, 4))
            confs.append(conf.reshape(n, -1, c))
        return np.concatenate(locs, axis=1), np.concatenate(confs, axis=1)


def head_forward(pyramid, weights, graph: Head):
    return graph(pyramid, weights)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, T.DTYPE)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def decode_boxes(loc, priors, variances=(0.1, 0.1, 0.2, 0.2), clip: bool = True) -> np.ndarray:
    """Turn variance-encoded offsets into ``(xmin, ymin, xmax, ymax)`` corners."""
    loc = np.asarray(loc, np.float64)
    priors = np.asarray(priors, np.float64)
    if loc.shape[-2:] != priors.shape:
        raise ConfigError(f"offsets {loc.shape} do not align with priors {priors.shape}")
    v0, v1, v2, v3 = variances
    cx = priors[:, 0] + loc[..., 0] * v0 * priors[:, 2]
    cy = priors[:, 1] + loc[..., 1] * v1 * priors[:, 3]
    w = priors[:, 2] * np.exp(loc[..., 2] * v2)
    h = priors[:, 3] * np.exp(loc[..., 3] * v3)
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
    if clip:
        boxes = np.clip(boxes, 0.0, 1.0)
    return boxes.astype(T.DTYPE)


def iou_one_to_many(box, boxes) -> np.ndarray:
    box = np.asarray(box, np.float64)
    boxes = np.asarray(boxes, np.float64)
    iw = np.clip(np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0]), 0, None)
    ih = np.clip(np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1]), 0, None)
    inter = iw * ih
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area + areas - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy NMS; returns kept indices in selection order.

    Candidates are visited by descending score, lower index first on ties;
    a candidate is dropped when its IoU with a kept box exceeds the threshold.
    """
    boxes = np.asarray(boxes)
    scores = np.asarray(scores)
    if len(boxes) != len(scores):
        raise ConfigError("boxes and scores must have equal length")
    order = np.lexsort((np.arange(len(scores)), -scores.astype(np.float64)))
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        order = rest[iou_one_to_many(boxes[i], boxes[rest]) <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


def postprocess(loc, conf_logits, priors, cfg: HeadConfig) -> list[Detection]:
    """Detections for one image from raw ``(P, 4)`` offsets and ``(P, C)`` logits."""
    boxes = decode_boxes(loc, priors, cfg.variances)
    probs = softmax(conf_logits)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    found = []
    for c in range(1, cfg.categories):
        scores = probs[:, c]
        idx = np.flatnonzero((scores > cfg.conf_thresh) & valid)
        if idx.size == 0:
            continue
        if idx.size > cfg.pre_nms_topk:
            top = np.lexsort((idx, -scores[idx].astype(np.float64)))[: cfg.pre_nms_topk]
            idx = idx[np.sort(top)]
        kept = idx[nms(boxes[idx], scores[idx], cfg.nms_iou)]
        found += [(float(scores[i]), c, int(i)) for i in kept]
    found.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [
        Detection(c, score, tuple(float(v) for v in boxes[i]))
        for score, c, i in found[: cfg.topk]
    ]


def format_detections(dets: Sequence[Detection]) -> str:
    return "".join(d.format() + "\n" for d in dets)
