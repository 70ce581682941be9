import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_conv_macs_loop, naive_conv2d
from tinydsod import ArchConfig, build_model
from tinydsod.analysis import (
    complexity_scan,
    conv_macs,
    conv_params,
    count_flops,
    count_params,
    report_model,
    stack_macs,
    totals_line,
)
from tinydsod.blocks import Stage, StageSpec, Stem
from tinydsod.config import parse_config
from tinydsod.layers import Conv, iter_layers
from tinydsod.tensor import ConvSpec
from tinydsod.weights import rand_init

# frozen from a reference run, cross-checked against rand_init value counts
VOC_PARAMS = 977_646
VOC_MACS = 1_158_457_952


@pytest.fixture(scope="module")
def voc():
    return build_model()


@pytest.fixture(scope="module")
def coco():
    return build_model(parse_config("[head]\ncategories = 81\n"))


class TestFormulas:
    def test_stem_conv1(self):
        conv = Stem.build().layers[0]
        assert conv_params(conv) == 1728 + 128
        assert conv.param_shapes()[f"{conv.name}.weight"] == (64, 3, 3, 3)
        assert int(np.prod((64, 3, 3, 3))) == 1728
        assert conv_macs(conv, (64, 150, 150)) == 38_880_000

    def test_stem_conv1_macs_loop_oracle_scaled(self):
        conv = Stem.build().layers[0]
        out = conv.out_shape((3, 30, 30))
        assert out == (64, 15, 15)
        assert conv_macs(conv, out) == count_conv_macs_loop((15, 15), 64, 3, 3, 3)
        # the same formula scaled to 300x300
        assert conv_macs(conv, (64, 150, 150)) == 100 * count_conv_macs_loop((15, 15), 64, 3, 3, 3)

    def test_transition0(self):
        conv = Conv("trans0.conv", ConvSpec.pointwise(256, 128))
        assert conv_params(conv) == 32768 + 256

    def test_depthwise(self):
        conv = Conv("dw", ConvSpec.depthwise(32, 3, 1, 1))
        assert conv_params(conv) == 32 * 9 + 64
        assert conv_macs(conv, (32, 10, 10)) == count_conv_macs_loop((10, 10), 32, 1, 3, 3)

    def test_biased_no_bn(self):
        conv = Conv("pw", ConvSpec.pointwise(8, 4, has_bias=True), bn=False, relu=False)
        assert conv_params(conv) == 36

    def test_macs_equal_multiplies_in_naive_conv(self):
        """Count the multiplies the naive oracle performs by feeding ones."""
        conv = Conv("c", ConvSpec.standard(2, 3, 3, 2, 1))
        x = np.ones((1, 2, 5, 5))
        w = np.ones((3, 2, 3, 3))
        # with no padding the sum of outputs equals the multiply count
        unpadded = naive_conv2d(x, w, stride=(2, 2))
        out = (3, *unpadded.shape[2:])
        plain = Conv("c", ConvSpec.standard(2, 3, 3, 2, 0))
        assert conv_macs(plain, out) == unpadded.sum()
        assert conv_macs(conv, conv.out_shape((2, 5, 5))) == 3 * 3 * 3 * 2 * 9


class TestTotals:
    def test_voc_frozen(self, voc):
        r = count_flops(voc, (300, 300))
        assert r.total_params == VOC_PARAMS
        assert r.total_macs == VOC_MACS

    def test_params_match_weight_store(self, voc, coco):
        for model in (voc, coco):
            assert count_params(model).total_params == rand_init(model).total_values

    def test_params_independent_of_input(self, voc):
        assert count_flops(voc, (300, 1200)).total_params == count_flops(voc, (300, 300)).total_params

    def test_area_scaling(self, voc):
        ratio = count_flops(voc, (300, 1200)).total_macs / count_flops(voc, (300, 300)).total_macs
        assert 3.8 <= ratio <= 4.2

    def test_rows_sum_to_totals(self, voc):
        r = count_flops(voc)
        assert sum(m.param_count for m in r.modules) == r.total_params
        assert sum(m.macs for m in r.modules) == r.total_macs
        assert all(x.param_count >= 0 and x.macs >= 0 for x in r.layers)

    def test_every_conv_reported_once(self, voc):
        r = count_flops(voc)
        convs = [layer.name for layer in iter_layers((voc.backbone, voc.dfpn, voc.head)) if isinstance(layer, Conv)]
        reported = [x.name for x in r.layers if "conv" in x.kind]
        assert sorted(convs) == sorted(reported)

    def test_elementwise_tracked_separately(self, voc):
        r = count_flops(voc)
        assert r.total_elementwise > 0
        assert all(x.macs == 0 for x in r.layers if "conv" not in x.kind)

    def test_dfpn_disabled_is_cheaper(self):
        on = count_flops(build_model())
        off = count_flops(build_model(parse_config("[dfpn]\nenabled = false\n")))
        assert off.total_params < on.total_params
        assert off.total_macs < on.total_macs


class TestComplexity:
    def test_ddb_a_exponent(self):
        fit = complexity_scan("ddb-a", 8, 2, 32, [8, 16, 32, 64])
        assert 2.5 <= fit.exponent <= 3.2

    def test_ddb_b_exponent(self):
        fit = complexity_scan("ddb-b", 32, None, 32, [8, 16, 32, 64])
        assert 1.7 <= fit.exponent <= 2.3

    def test_macs_increase(self):
        fit = complexity_scan("ddb-b", 32, None, 32, [64, 8, 32, 16, 16])
        assert fit.depths == (8, 16, 32, 64)
        assert all(a < b for a, b in zip(fit.macs, fit.macs[1:]))

    def test_ddb_b_doubling_ratio_tends_to_4(self):
        ratio = stack_macs("ddb-b", 32, None, 32, 512) / stack_macs("ddb-b", 32, None, 32, 256)
        assert ratio == pytest.approx(4, abs=0.05)

    def test_stack_matches_stage_report(self):
        stage = Stage.build("s", StageSpec("ddb-a", 8, 3, 2), 32)
        assert stack_macs("ddb-a", 8, 2, 32, 3) == count_flops(stage, (38, 38)).total_macs

    @pytest.mark.parametrize("depths", [[8], [8, 8], [0, 8]])
    def test_bad_depths(self, depths):
        with pytest.raises(ValueError):
            complexity_scan("ddb-b", 32, None, 32, depths)


class TestReport:
    def test_report_rows(self, voc):
        text = report_model(voc)
        for expected in ("256 x 75 x 75", "416 x 38 x 38", "736 x 19 x 19", "64 x 19 x 19", "128 x 75 x 75"):
            assert expected in text
        assert "128 x {38x38, 19x19, 10x10, 5x5, 3x3, 1x1}" in text
        assert "8732 priors x (4 + 21)" in text
        assert text.splitlines()[-1] == "params: 0.98M  flops(MAC): 1.16B"

    def test_module_order(self, voc):
        titles = [m.title for m in count_flops(voc).modules]
        assert titles[0] == "Stem" and titles[-2:] == ["D-FPN", "Head"]
        assert titles[1:9] == [
            "Dense stage 0",
            "Transition layer 0",
            "Dense stage 1",
            "Transition layer 1",
            "Dense stage 2",
            "Transition layer 2",
            "Dense stage 3",
            "Transition layer 3",
        ]

    def test_deterministic(self, voc):
        assert report_model(voc) == report_model(build_model())

    def test_csv(self, voc):
        rows = list(csv.reader(io.StringIO(report_model(voc, fmt="csv"))))
        assert rows[0] == ["module", "output", "params", "macs"]
        assert rows[-1] == ["total", "", str(VOC_PARAMS), str(VOC_MACS)]
        assert sum(int(r[2]) for r in rows[1:-1]) == VOC_PARAMS

    def test_csv_detail(self, voc):
        rows = list(csv.reader(io.StringIO(report_model(voc, fmt="csv", detail=True))))
        assert rows[0][0] == "layer"
        assert rows[1][0] == "stem.conv1" and rows[1][3] == str(1728 + 128) and rows[1][4] == "38880000"

    def test_empty_graph(self):
        text = report_model(None)
        assert "Module" in text.splitlines()[1]
        assert "total params: 0  total MACs: 0" in text
        assert text.splitlines()[-1] == "params: 0.00M  flops(MAC): 0.00B"

    def test_unknown_format(self, voc):
        with pytest.raises(ValueError):
            report_model(voc, fmt="xml")

    def test_coco_differs_only_in_head(self, voc, coco):
        a = report_model(voc).splitlines()
        b = report_model(coco).splitlines()
        assert len(a) == len(b)
        changed = [x.split()[0] for x, y in zip(a, b) if x != y]
        # head row, totals and the compact summary line
        assert changed == ["Head", "total", "params:"]
        assert count_flops(voc).modules[:-1] == count_flops(coco).modules[:-1]

    def test_totals_line(self, voc):
        assert totals_line(count_flops(voc)) == "params: 0.98M  flops(MAC): 1.16B"


@settings(max_examples=20, deadline=None)
@given(
    h=st.integers(32, 96),
    w=st.integers(32, 96),
    cats=st.integers(2, 30),
)
def test_params_agree_with_store_for_any_head(h, w, cats):
    arch = parse_config(f"[head]\ncategories = {cats}\n[input]\nheight = {h}\nwidth = {w}\n")
    model = build_model(arch)
    assert count_params(model).total_params == sum(int(np.prod(s)) for s in model.param_shapes().values())


def test_default_arch_equals_empty_config():
    assert parse_config("") == ArchConfig()
