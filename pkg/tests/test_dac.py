import numpy as np
import pytest

from causalseg import tensor as T
from causalseg.blocks import SimamConfig
from causalseg.dac import concat_stage, dac_fuse, make_dac_layer
from causalseg.errors import ShapeError
from causalseg.tensor import Tensor, Tape, backward, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


def scalars(k1, k2):
    return Tensor(np.array(k1), requires_grad=True), Tensor(np.array(k2), requires_grad=True)


class TestConcatStage:
    def test_unit_weights_plain_concat(self):
        f1 = Tensor(rng(1).normal(size=(1, 2, 4, 4)))
        f2 = Tensor(rng(2).normal(size=(1, 3, 4, 4)))
        k1, k2 = scalars(1.0, 1.0)
        out = concat_stage(f1, f2, k1, k2)
        np.testing.assert_array_equal(out.data, np.concatenate([f1.data, f2.data], axis=1))

    def test_doubling_k1_scales_first_block_only(self):
        f1 = Tensor(rng(3).normal(size=(1, 2, 4, 4)))
        f2 = Tensor(rng(4).normal(size=(1, 2, 4, 4)))
        base = concat_stage(f1, f2, *scalars(1.0, 1.0)).data
        bumped = concat_stage(f1, f2, *scalars(2.0, 1.0)).data
        np.testing.assert_array_equal(bumped[:, :2], 2.0 * base[:, :2])
        np.testing.assert_array_equal(bumped[:, 2:], base[:, 2:])

    def test_symmetry(self):
        f = Tensor(rng(5).normal(size=(1, 2, 4, 4)))
        out = concat_stage(f, f, *scalars(1.5, 1.5)).data
        np.testing.assert_array_equal(out[:, :2], out[:, 2:])

    def test_linearity_in_branch_vs_weight(self):
        f1 = Tensor(rng(6).normal(size=(1, 2, 4, 4)))
        f2 = Tensor(rng(7).normal(size=(1, 2, 4, 4)))
        alpha = 3.25
        a = concat_stage(Tensor(alpha * f1.data), f2, *scalars(1.0, 1.0)).data
        b = concat_stage(f1, f2, *scalars(alpha, 1.0)).data
        np.testing.assert_array_equal(a, b)

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            concat_stage(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 5, 4))),
                         *scalars(1.0, 1.0))


class TestDacFuse:
    def test_output_shape(self):
        layer = make_dac_layer(rng(8), 16, 24, 32, layer_index=1)
        f1 = Tensor(rng(9).normal(size=(1, 16, 32, 32)))
        f2 = Tensor(rng(10).normal(size=(1, 24, 32, 32)))
        out = dac_fuse(f1, f2, layer, SimamConfig())
        assert out.shape == (1, 32, 32, 32)

    def test_fresh_layer_unit_weights(self):
        layer = make_dac_layer(rng(11), 4, 4, 8, layer_index=2)
        assert layer.k1.data == 1.0 and layer.k2.data == 1.0

    def test_zero_k2_zeroes_second_block_pre_simam(self):
        f1 = Tensor(rng(12).normal(size=(1, 2, 4, 4)))
        f2 = Tensor(rng(13).normal(size=(1, 3, 4, 4)))
        k1, k2 = scalars(1.0, 0.0)
        out = concat_stage(f1, f2, k1, k2)
        np.testing.assert_array_equal(out.data[:, 2:], 0.0)
        np.testing.assert_array_equal(out.data[:, :2], f1.data)

    def test_grad_check_branch_weights(self):
        layer = make_dac_layer(rng(14), 2, 2, 2, layer_index=1)
        f1 = Tensor(rng(15).normal(size=(1, 2, 4, 4)))
        f2 = Tensor(rng(16).normal(size=(1, 2, 4, 4)))
        cfg = SimamConfig()

        def f_k1(t):
            swapped = make_dac_layer(rng(14), 2, 2, 2, 1)
            swapped.fuse = layer.fuse
            swapped.k1, swapped.k2 = t, layer.k2
            return T.total_sum(dac_fuse(f1, f2, swapped, cfg))

        def f_k2(t):
            swapped = make_dac_layer(rng(14), 2, 2, 2, 1)
            swapped.fuse = layer.fuse
            swapped.k1, swapped.k2 = layer.k1, t
            return T.total_sum(dac_fuse(f1, f2, swapped, cfg))

        assert grad_check(f_k1, layer.k1) < 1e-4
        assert grad_check(f_k2, layer.k2) < 1e-4

    def test_grads_reach_everything(self):
        layer = make_dac_layer(rng(17), 2, 3, 4, layer_index=3)
        f1 = Tensor(rng(18).normal(size=(2, 2, 4, 4)), requires_grad=True)
        f2 = Tensor(rng(19).normal(size=(2, 3, 4, 4)), requires_grad=True)
        with Tape() as tape:
            loss = T.total_sum(dac_fuse(f1, f2, layer, SimamConfig()))
        grads = backward(loss, tape)
        for t in (f1, f2, layer.k1, layer.k2, layer.fuse["kernel"], layer.fuse["bias"]):
            assert t in grads
            assert np.any(grads[t] != 0.0)

    def test_preserves_batch_and_spatial(self):
        layer = make_dac_layer(rng(20), 3, 5, 6, layer_index=4)
        f1 = Tensor(rng(21).normal(size=(3, 3, 6, 10)))
        f2 = Tensor(rng(22).normal(size=(3, 5, 6, 10)))
        assert dac_fuse(f1, f2, layer, SimamConfig()).shape == (3, 6, 6, 10)
