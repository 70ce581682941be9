"""Tiny-DSOD: depthwise dense backbone, depthwise FPN and SSD-style head in numpy."""
from .analysis import complexity_scan, count_flops, count_params, report_model
from .backbone import BackboneConfig, FeatureTaps, build_backbone
from .config import ArchConfig, parse_config, print_config
from .dfpn import PyramidConfig
from .head import Detection, HeadConfig, decode_boxes, gen_priors, nms
from .model import TinyDSOD, build_model, detect, detect_batch
from .weights import WeightStore, load_weights, rand_init, save_weights

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "BackboneConfig",
    "Detection",
    "FeatureTaps",
    "HeadConfig",
    "PyramidConfig",
    "TinyDSOD",
    "WeightStore",
    "build_backbone",
    "build_model",
    "complexity_scan",
    "count_flops",
    "count_params",
    "decode_boxes",
    "detect",
    "detect_batch",
    "gen_priors",
    "load_weights",
    "nms",
    "parse_config",
    "print_config",
    "rand_init",
    "report_model",
    "save_weights",
]
