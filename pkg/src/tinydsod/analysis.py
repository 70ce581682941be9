"""Static accounting: output shapes, parameter counts and MACs per layer.

Conventions
-----------
* 1 FLOP = 1 MAC (multiply-accumulate). Pooling, activations, resizing and
  additions cost 0 MACs; their output sizes are tallied separately as
  element-wise ops.
* Batch-norm contributes 2 parameters per channel (scale and shift); running
  statistics are not parameters.

Counts are computed from layer specs by formula, independently of the
parameter-shape tables used to allocate weights.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backbone import Backbone
from .blocks import Stage, StageSpec
from .errors import ConfigError
from .layers import Conv, L2Norm
from .model import TinyDSOD
from .tensor import DEPTHWISE

DEFAULT_HW = (300, 300)


@dataclass(frozen=True)
class LayerReport:
    name: str
    kind: str
    out_shape: tuple[int, ...]
    param_count: int
    macs: int
    elementwise: int = 0


@dataclass(frozen=True)
class ModuleReport:
    title: str
    output: str
    param_count: int
    macs: int


@dataclass
class ModelReport:
    input_hw: tuple[int, int]
    layers: list[LayerReport] = field(default_factory=list)
    modules: list[ModuleReport] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.param_count for r in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.layers)

    @property
    def total_elementwise(self) -> int:
        return sum(r.elementwise for r in self.layers)

    def module(self, title: str) -> ModuleReport:
        for m in self.modules:
            if m.title == title:
                return m
        raise KeyError(title)


def conv_params(layer: Conv) -> int:
    s = layer.spec
    kh, kw = s.kernel
    n = s.out_c * kh * kw if s.kind == DEPTHWISE else s.out_c * s.in_c * kh * kw
    if s.has_bias:
        n += s.out_c
    if layer.bn:
        n += 2 * s.out_c
    return n


def conv_macs(layer: Conv, out_shape) -> int:
    s = layer.spec
    kh, kw = s.kernel
    _, oh, ow = out_shape
    per_pixel = s.out_c * kh * kw if s.kind == DEPTHWISE else s.out_c * s.in_c * kh * kw
    return oh * ow * per_pixel


def layer_report(layer, in_shape, out_shape) -> LayerReport:
    if isinstance(layer, Conv):
        kind = f"{layer.spec.kind}-conv {layer.spec.kernel[0]}x{layer.spec.kernel[1]}/s{layer.spec.stride[0]}"
        return LayerReport(layer.name, kind, tuple(out_shape), conv_params(layer), conv_macs(layer, out_shape))
    elems = int(np.prod(out_shape))
    if isinstance(layer, L2Norm):
        return LayerReport(layer.name, layer.kind, tuple(out_shape), layer.channels, 0, elems)
    return LayerReport(layer.name, layer.kind, tuple(out_shape), 0, 0, elems)


def _fmt_shape(shape) -> str:
    return " x ".join(str(d) for d in shape)


def _unit_rows(graph, input_hw):
    """Yield ``(title, output_text, [(layer, in, out), ...])`` per top-level unit."""
    h, w = input_hw
    if isinstance(graph, TinyDSOD):
        shape = (graph.arch.backbone.in_channels, h, w)
        for unit, in_shape, out in graph.backbone.walk_units(shape):
            yield unit.title, _fmt_shape(out), list(unit.walk(in_shape))
        taps = graph.backbone.tap_shapes(shape)
        levels = graph.dfpn.level_shapes(taps)
        sizes = ", ".join(f"{s[1]}x{s[2]}" for s in levels)
        yield graph.dfpn.title, f"{levels[0][0]} x {{{sizes}}}", list(graph.dfpn.walk(taps))
        n_priors = sum(s[1] * s[2] * b for s, b in zip(levels, graph.head.config.boxes))
        head_out = f"{n_priors} priors x (4 + {graph.head.config.categories})"
        yield graph.head.title, head_out, list(graph.head.walk(levels))
    elif isinstance(graph, Backbone):
        shape = (graph.config.in_channels, h, w)
        for unit, in_shape, out in graph.walk_units(shape):
            yield unit.title, _fmt_shape(out), list(unit.walk(in_shape))
    elif isinstance(graph, Stage):
        shape = (graph.n_in, h, w)
        yield graph.title, _fmt_shape(graph.out_shape(shape)), list(graph.walk(shape))
    elif graph is None or (isinstance(graph, (list, tuple)) and not graph):
        return
    else:
        raise ConfigError(f"cannot analyse object of type {type(graph).__name__}")


def count_flops(graph, input_hw=None) -> ModelReport:
    """Per-layer report (shapes, params, MACs) at the given input size."""
    if input_hw is None:
        input_hw = graph.arch.input_hw if isinstance(graph, TinyDSOD) else DEFAULT_HW
    report = ModelReport(tuple(input_hw))
    for title, output, steps in _unit_rows(graph, input_hw):
        rows = [layer_report(layer, i, o) for layer, i, o in steps]
        report.layers += rows
        report.modules.append(
            ModuleReport(title, output, sum(r.param_count for r in rows), sum(r.macs for r in rows))
        )
    return report


def count_params(graph) -> ModelReport:
    """Same report as :func:`count_flops` at the graph's nominal input size.

    Parameter counts do not depend on the input size.
    """
    return count_flops(graph, None)


@dataclass(frozen=True)
class ComplexityFit:
    kind: str
    g: int
    w: int | None
    n0: int
    depths: tuple[int, ...]
    macs: tuple[int, ...]
    exponent: float


def stack_macs(kind: str, g: int, w: int | None, n0: int, depth: int, hw=(38, 38)) -> int:
    stage = Stage.build("scan", StageSpec(kind, g, depth, w), n0)
    return count_flops(stage, hw).total_macs


def complexity_scan(kind: str, g: int, w: int | None, n0: int, depths: Sequence[int], hw=(38, 38)) -> ComplexityFit:
    """MACs of ``L`` stacked blocks for each ``L`` and the log-log growth exponent.

    The exponent is the least-squares slope of log(MACs) against log(L) over
    the larger half of the (sorted, distinct) depths.
    """
    depths = tuple(sorted(set(int(d) for d in depths)))
    if len(depths) < 2:
        raise ValueError("complexity_scan needs at least two distinct depths")
    if depths[0] < 1:
        raise ValueError("depths must be >= 1")
    macs = tuple(stack_macs(kind, g, w, n0, d, hw) for d in depths)
    k = max(2, math.ceil(len(depths) / 2))
    x = np.log(np.asarray(depths[-k:], dtype=np.float64))
    y = np.log(np.asarray(macs[-k:], dtype=np.float64))
    slope = float(np.polyfit(x, y, 1)[0])
    return ComplexityFit(kind, g, w, n0, depths, macs, slope)


def _millions(n: int) -> str:
    return f"{n / 1e6:.2f}M"


def _billions(n: int) -> str:
    return f"{n / 1e9:.2f}B"


def totals_line(report: ModelReport) -> str:
    return f"params: {_millions(report.total_params)}  flops(MAC): {_billions(report.total_macs)}"


def report_model(graph, input_hw=None, fmt: str = "text", detail: bool = False) -> str:
    """Module-level table (output size, params, MACs) plus totals, as text or CSV."""
    report = count_flops(graph, input_hw)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if detail:
            writer.writerow(["layer", "kind", "output", "params", "macs"])
            for r in report.layers:
                writer.writerow([r.name, r.kind, _fmt_shape(r.out_shape), r.param_count, r.macs])
        else:
            writer.writerow(["module", "output", "params", "macs"])
            for m in report.modules:
                writer.writerow([m.title, m.output, m.param_count, m.macs])
        writer.writerow(["total", "", report.total_params, report.total_macs])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")

    if detail:
        header = ("Layer", "Kind", "Output size", "Params", "MACs")
        rows = [(r.name, r.kind, _fmt_shape(r.out_shape), f"{r.param_count:,}", f"{r.macs:,}") for r in report.layers]
    else:
        header = ("Module", "Output size", "Params", "MACs")
        rows = [(m.title, m.output, f"{m.param_count:,}", f"{m.macs:,}") for m in report.modules]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    numeric = {len(header) - 2, len(header) - 1}

    def line(cells):
        return "  ".join(
            str(c).rjust(wd) if i in numeric else str(c).ljust(wd) for i, (c, wd) in enumerate(zip(cells, widths))
        ).rstrip()

    out = [f"input: {report.input_hw[0]}x{report.input_hw[1]}  (1 FLOP = 1 MAC)", line(header)]
    out.append("  ".join("-" * wd for wd in widths))
    out += [line(r) for r in rows]
    out.append(f"total params: {report.total_params:,}  total MACs: {report.total_macs:,}")
    out.append(totals_line(report))
    return "\n".join(out) + "\n"
