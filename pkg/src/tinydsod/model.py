"""Full detector: backbone -> D-FPN -> multibox head."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backbone import Backbone, build_backbone
from .config import ArchConfig
from .dfpn import DFPN
from .errors import ConfigError
from .head import Detection, Head, HeadConfig, gen_priors, postprocess
from .layers import fold_network, param_shapes
from .tensor import as_tensor


@dataclass(frozen=True)
class TinyDSOD:
    arch: ArchConfig
    backbone: Backbone
    dfpn: DFPN
    head: Head

    @property
    def units(self):
        return (*self.backbone.units, self.dfpn, self.head)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return param_shapes((self.backbone, self.dfpn, self.head))

    def level_shapes(self, input_hw=None):
        h, w = input_hw or self.arch.input_hw
        taps = self.backbone.tap_shapes((self.arch.backbone.in_channels, h, w))
        return self.dfpn.level_shapes(taps)

    def priors(self, input_hw=None) -> np.ndarray:
        return gen_priors(self.head.config, [s[1:] for s in self.level_shapes(input_hw)])

    def features(self, img, params):
        return self.dfpn(self.backbone(img, params), params)

    def __call__(self, img, params):
        """Raw ``(loc, conf_logits)`` of shapes ``(N, P, 4)`` and ``(N, P, C)``."""
        return self.head(self.features(img, params), params)

    def folded(self, params):
        """Return ``(model, params)`` with every batch-norm merged into its conv."""
        (bb, fpn, head), folded = fold_network((self.backbone, self.dfpn, self.head), params)
        return replace(self, backbone=bb, dfpn=fpn, head=head), folded


def build_model(arch: ArchConfig | None = None) -> TinyDSOD:
    arch = arch or ArchConfig()
    backbone = build_backbone(arch.backbone)
    dfpn = DFPN.build(arch.dfpn, backbone.tap_channels)
    if arch.dfpn.levels != len(arch.head.boxes):
        raise ConfigError(
            f"pyramid has {arch.dfpn.levels} levels but the head defines {len(arch.head.boxes)}"
        )
    head = Head.build(arch.head, [arch.dfpn.channels] * arch.dfpn.levels)
    return TinyDSOD(arch, backbone, dfpn, head)


def detect_batch(img, model: TinyDSOD, params, cfg: HeadConfig | None = None) -> list[list[Detection]]:
    img = as_tensor(img, "image")
    cfg = cfg or model.head.config
    if cfg.categories != model.head.config.categories:
        raise ConfigError("post-processing config must match the head's category count")
    loc, conf = model(img, params)
    priors = model.priors(img.shape[2:])
    return [postprocess(loc[i], conf[i], priors, cfg) for i in range(img.shape[0])]


def detect(img, model: TinyDSOD, params, cfg: HeadConfig | None = None) -> list[Detection]:
    """Detections for a single image (batch size 1)."""
    img = as_tensor(img, "image")
    if img.shape[0] != 1:
        raise ConfigError(f"detect() takes one image, got a batch of {img.shape[0]}; use detect_batch")
    return detect_batch(img, model, params, cfg)[0]
