import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinydsod.analysis import conv_params, count_flops
from tinydsod.blocks import (
    DdbA,
    DdbASpec,
    DdbB,
    DdbBSpec,
    Stage,
    StageSpec,
    Stem,
    Transition,
    TransitionSpec,
    ddb_a_forward,
    ddb_b_forward,
    stage_forward,
    stem_forward,
    transition_forward,
)
from tinydsod.errors import ConfigError, MissingWeightError
from tinydsod.layers import iter_layers, param_shapes
from tinydsod.weights import rand_init


def conv_weight_count(unit):
    """Kernel weights only: conv params minus their batch-norm terms."""
    return sum(conv_params(layer) - 2 * layer.spec.out_c * layer.bn for layer in iter_layers(unit))


def weights_for(unit, seed=0):
    return rand_init(param_shapes(unit), seed)


class TestDdbA:
    def test_channel_arithmetic(self, rng):
        spec = DdbASpec(g=8, w=2, n=128)
        block = DdbA.build("b", spec)
        x = rng.standard_normal((1, 128, 5, 6)).astype(np.float32)
        y = block(x, weights_for(block))
        assert y.shape == (1, 136, 5, 6)

    def test_conv_weight_formula(self):
        block = DdbA.build("b", DdbASpec(g=8, w=2, n=8))
        # n*wn + 9*wn + wn*g
        assert conv_weight_count(block) == 128 + 144 + 128 == 400

    def test_function_form(self, rng):
        spec = DdbASpec(g=4, w=3, n=5)
        x = rng.standard_normal((2, 5, 4, 4)).astype(np.float32)
        w = weights_for(DdbA.build("blk", spec))
        assert ddb_a_forward(x, spec, w, name="blk").shape == (2, 9, 4, 4)

    def test_missing_weight(self, rng):
        spec = DdbASpec(g=4, w=2, n=4)
        w = weights_for(DdbA.build("blk", spec))
        del w["blk.pw2.weight"]
        with pytest.raises(MissingWeightError, match="blk.pw2.weight"):
            ddb_a_forward(np.zeros((1, 4, 3, 3), np.float32), spec, w, name="blk")


class TestDdbB:
    def test_conv_weight_formula(self):
        block = DdbB.build("b", DdbBSpec(g=32, n=128))
        assert conv_weight_count(block) == 4096 + 288 == 4384

    def test_passthrough_untouched(self, rng):
        spec = DdbBSpec(g=6, n=10)
        x = rng.standard_normal((2, 10, 7, 5)).astype(np.float32)
        y = ddb_b_forward(x, spec, weights_for(DdbB.build("block", spec)))
        np.testing.assert_array_equal(y[:, :10], x)
        assert y.shape == (2, 16, 7, 5)

    def test_wrong_input_channels(self):
        spec = DdbBSpec(g=4, n=8)
        with pytest.raises(ConfigError):
            ddb_b_forward(np.zeros((1, 7, 3, 3), np.float32), spec, weights_for(DdbB.build("block", spec)))


class TestStage:
    def test_dense_stage_0(self):
        stage = Stage.build("stage0", StageSpec("ddb-b", 32, 4), 128)
        assert stage.out_shape((128, 75, 75)) == (256, 75, 75)

    def test_dense_stage_3(self):
        stage = Stage.build("stage3", StageSpec("ddb-b", 80, 6), 256)
        assert stage.out_shape((256, 19, 19)) == (736, 19, 19)

    def test_stage_1_forward(self, rng):
        spec = StageSpec("ddb-b", 48, 6)
        stage = Stage.build("stage", spec, 128)
        x = rng.standard_normal((1, 128, 38, 38)).astype(np.float32)
        y = stage_forward(x, spec, weights_for(stage))
        assert y.shape == (1, 416, 38, 38)

    def test_stage_2_shape(self):
        assert Stage.build("s", StageSpec("ddb-b", 64, 6), 128).out_shape((128, 19, 19)) == (512, 19, 19)

    def test_zero_repeat_is_identity(self, rng):
        x = rng.standard_normal((1, 5, 3, 3)).astype(np.float32)
        np.testing.assert_array_equal(stage_forward(x, StageSpec("ddb-b", 8, 0), {}), x)

    def test_layer_names(self):
        stage = Stage.build("stage1", StageSpec("ddb-a", 8, 2, 2), 16)
        names = list(param_shapes(stage))
        assert "stage1.block0.pw.weight" in names
        assert "stage1.block1.dw.weight" in names
        assert "stage1.block1.pw2.bn.beta" in names

    @settings(max_examples=30, deadline=None)
    @given(
        kind=st.sampled_from(["ddb-a", "ddb-b"]),
        g=st.integers(1, 16),
        w=st.integers(1, 3),
        repeat=st.integers(0, 5),
        n0=st.integers(1, 24),
        h=st.integers(1, 6),
        wd=st.integers(1, 6),
    )
    def test_growth_law_and_spatial_preservation(self, kind, g, w, repeat, n0, h, wd):
        spec = StageSpec(kind, g, repeat, w if kind == "ddb-a" else None)
        stage = Stage.build("s", spec, n0)
        assert stage.out_shape((n0, h, wd)) == (n0 + repeat * g, h, wd)
        if repeat and n0 * max(1, w) * h * wd <= 2000:
            x = np.random.default_rng(0).standard_normal((1, n0, h, wd)).astype(np.float32)
            y = stage(x, weights_for(stage))
            assert y.shape == (1, n0 + repeat * g, h, wd)
            np.testing.assert_array_equal(y[:, :n0], x)


class TestStem:
    def test_output_shape(self, rng):
        stem = Stem.build()
        x = rng.standard_normal((1, 3, 300, 300)).astype(np.float32)
        assert stem_forward(x, weights_for(stem)).shape == (1, 128, 75, 75)

    def test_batch_preserved(self):
        assert Stem.build().out_shape((3, 300, 300)) == (128, 75, 75)
        stem = Stem.build()
        x = np.zeros((8, 3, 32, 32), np.float32)
        assert stem(x, weights_for(stem)).shape[0] == 8

    def test_304_input(self):
        assert Stem.build().out_shape((3, 304, 304)) == (128, 76, 76)

    def test_wrong_channels(self):
        stem = Stem.build()
        with pytest.raises(ConfigError):
            stem(np.zeros((1, 4, 16, 16), np.float32), weights_for(stem))


class TestTransition:
    @pytest.mark.parametrize(
        "in_shape, out_c, pool, expected",
        [((256, 75, 75), 128, True, (128, 38, 38)), ((512, 19, 19), 256, False, (256, 19, 19)), ((736, 19, 19), 64, False, (64, 19, 19))],
    )
    def test_output_shapes(self, in_shape, out_c, pool, expected):
        t = Transition.build("trans", TransitionSpec(in_shape[0], out_c, pool))
        assert t.out_shape(in_shape) == expected

    def test_forward(self, rng):
        spec = TransitionSpec(16, 8, True)
        t = Transition.build("trans", spec)
        x = rng.standard_normal((1, 16, 7, 7)).astype(np.float32)
        assert transition_forward(x, spec, weights_for(t)).shape == (1, 8, 4, 4)

    def test_channel_mismatch(self):
        spec = TransitionSpec(16, 8, False)
        with pytest.raises(ConfigError):
            transition_forward(np.zeros((1, 15, 3, 3), np.float32), spec, weights_for(Transition.build("trans", spec)))


def test_ddb_b_to_a_never_decreases_macs():
    @settings(max_examples=40, deadline=None)
    @given(g=st.integers(1, 32), L=st.integers(1, 8), w=st.integers(1, 4), extra=st.integers(0, 64))
    def check(g, L, w, extra):
        n0 = g + extra
        a = count_flops(Stage.build("s", StageSpec("ddb-a", g, L, w), n0), (8, 8)).total_macs
        b = count_flops(Stage.build("s", StageSpec("ddb-b", g, L), n0), (8, 8)).total_macs
        assert a >= b

    check()
