"""Gradient-tape correctness: every differentiable op against central
finite differences, in float64."""

import numpy as np
import pytest

from forgenet import tensor as T
from forgenet.errors import UsageError
from forgenet.layers import BatchNormState
from forgenet.tensor import GradTape, Parameter, Tensor
from forgenet.training import bce_loss

TOL = 1e-4
STEP = 1e-5


def away_from_kinks(arr, margin):
    """Push values outside +-margin so relu kinks cannot corrupt differences."""
    out = arr.copy()
    small = np.abs(out) < margin
    out[small] = margin * np.where(out[small] >= 0, 1.0, -1.0) * 2.0
    return out


def param(name, arr):
    return Parameter(name, Tensor(np.asarray(arr), np.float64))


class TestPerOpGradients:
    def test_conv2d_same(self):
        rng = np.random.default_rng(0)
        x = param("x", rng.standard_normal((5, 6, 2)))
        w = param("w", rng.standard_normal((3, 3, 2, 3)) * 0.5)
        b = param("b", rng.standard_normal(3) * 0.1)
        err = T.grad_check(
            lambda: T.sum_all(T.sigmoid(T.conv2d(x.value, w.value, b.value))),
            [x, w, b], step=STEP)
        assert err <= TOL

    def test_conv2d_valid_stride2(self):
        rng = np.random.default_rng(1)
        x = param("x", rng.standard_normal((7, 7, 2)))
        w = param("w", rng.standard_normal((3, 3, 2, 2)) * 0.5)
        err = T.grad_check(
            lambda: T.sum_all(T.sigmoid(
                T.conv2d(x.value, w.value, stride=2, padding="valid"))),
            [x, w], step=STEP)
        assert err <= TOL

    def test_conv_transpose(self):
        rng = np.random.default_rng(2)
        x = param("x", rng.standard_normal((4, 5, 3)))
        w = param("w", rng.standard_normal((3, 3, 2, 3)) * 0.5)
        b = param("b", rng.standard_normal(2) * 0.1)
        err = T.grad_check(
            lambda: T.sum_all(T.sigmoid(T.conv_transpose2d(x.value, w.value, b.value))),
            [x, w, b], step=STEP)
        assert err <= TOL

    def test_maxpool(self):
        rng = np.random.default_rng(3)
        # Distinct values keep the argmax stable under the probe step.
        x = param("x", rng.permutation(6 * 6 * 2).reshape(6, 6, 2) * 0.37)
        err = T.grad_check(lambda: T.sum_all(T.sigmoid(T.maxpool2x2(x.value))),
                           [x], step=1e-6)
        assert err <= TOL

    @pytest.mark.parametrize("mode", ["train", "infer"])
    def test_batchnorm(self, mode):
        rng = np.random.default_rng(4)
        x = param("x", rng.standard_normal((2, 4, 4, 3)))
        st = BatchNormState(3, dtype=np.float64)
        st.running_mean = rng.standard_normal(3)
        st.running_var = rng.uniform(0.5, 2.0, 3)
        st.gamma.value = Tensor(rng.uniform(0.5, 1.5, 3), np.float64)
        st.beta.value = Tensor(rng.standard_normal(3) * 0.3, np.float64)
        err = T.grad_check(
            lambda: T.sum_all(T.sigmoid(T.batchnorm(x.value, st, mode))),
            [x, st.gamma, st.beta], step=STEP)
        assert err <= TOL

    def test_relu_kink_avoided(self):
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((5, 5, 2))
        x = param("x", away_from_kinks(raw, 10 * STEP))
        err = T.grad_check(lambda: T.sum_all(T.relu(x.value)), [x], step=STEP)
        assert err <= TOL

    def test_sigmoid(self):
        rng = np.random.default_rng(6)
        x = param("x", rng.standard_normal((4, 4, 2)) * 2)
        err = T.grad_check(lambda: T.sum_all(T.sigmoid(x.value)), [x], step=STEP)
        assert err <= TOL

    def test_concat_gap_dense(self):
        rng = np.random.default_rng(7)
        a = param("a", rng.standard_normal((4, 4, 2)))
        b = param("b", rng.standard_normal((4, 4, 1)))
        w = param("w", rng.standard_normal((3, 2)) * 0.5)
        bias = param("bias", rng.standard_normal(2) * 0.1)

        def build():
            h = T.concat_channels(a.value, b.value)
            g = T.reshape(T.global_avg_pool(h), (3,))
            return T.sum_all(T.sigmoid(T.dense(g, w.value, bias.value)))

        assert T.grad_check(build, [a, b, w, bias], step=STEP) <= TOL

    def test_scale_ops_add_maximum(self):
        rng = np.random.default_rng(8)
        x = param("x", rng.standard_normal((3, 4, 2)))
        g = param("g", rng.uniform(0.2, 0.8, 2))
        s = param("s", rng.uniform(0.2, 0.8, (3, 4, 1)))
        y = param("y", rng.standard_normal((3, 4, 2)))

        def build():
            c = T.scale_channels(x.value, g.value)
            sp = T.scale_spatial(x.value, s.value)
            return T.sum_all(T.sigmoid(T.add(c, T.maximum(sp, y.value))))

        assert T.grad_check(build, [x, g, s, y], step=STEP) <= TOL

    def test_bce(self):
        rng = np.random.default_rng(9)
        logits = param("logits", rng.standard_normal((4, 4, 1)))
        target = (rng.uniform(size=(4, 4, 1)) > 0.5).astype(np.float64)
        err = T.grad_check(
            lambda: bce_loss(T.sigmoid(logits.value), Tensor(target, np.float64)),
            [logits], step=STEP)
        assert err <= TOL


class TestBackwardBasics:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
        with GradTape() as tape:
            loss = T.sum_all(x)
        T.backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_relu_dead_zone_zero_grad(self):
        x = Tensor(-np.ones((3, 3, 1), np.float64))
        with GradTape() as tape:
            loss = T.sum_all(T.relu(x))
        T.backward(tape, loss)
        assert not x.grad.any()

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2), np.float64))
        with GradTape() as tape:
            out = T.relu(x)
        with pytest.raises(UsageError):
            T.backward(tape, out)

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.full((2, 2), 3.0))
        with GradTape() as tape:
            loss = T.sum_all(T.add(x, x))
        T.backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))

    def test_linear_graph_is_exact(self):
        rng = np.random.default_rng(10)
        x = param("x", rng.standard_normal((4, 4, 2)))
        w = param("w", rng.standard_normal((3, 3, 2, 2)))
        err = T.grad_check(lambda: T.sum_all(T.conv2d(x.value, w.value)),
                           [x, w], step=1e-4)
        assert err <= 1e-9

    def test_composite_conv_bn_sigmoid_bce(self):
        rng = np.random.default_rng(11)
        x = param("x", rng.standard_normal((8, 8, 3)))
        w = param("w", rng.standard_normal((3, 3, 3, 4)) * 0.4)
        b = param("b", rng.standard_normal(4) * 0.1)
        st = BatchNormState(4, dtype=np.float64)
        st.running_mean = rng.standard_normal(4) * 0.2
        st.running_var = rng.uniform(0.8, 1.4, 4)
        target = (rng.uniform(size=(8, 8, 4)) > 0.5).astype(np.float64)

        def build():
            h = T.conv2d(x.value, w.value, b.value)
            h = T.batchnorm(h, st, "infer")
            return bce_loss(T.sigmoid(h), Tensor(target, np.float64))

        err = T.grad_check(build, [x, w, b, st.gamma, st.beta], step=STEP)
        assert err <= TOL

    def test_sampled_coordinates_reproducible(self):
        rng = np.random.default_rng(12)
        x = param("x", rng.standard_normal((10, 10, 3)))
        w = param("w", rng.standard_normal((3, 3, 3, 4)) * 0.4)

        def build():
            return T.sum_all(T.sigmoid(T.conv2d(x.value, w.value)))

        e1 = T.grad_check(build, [x, w], step=STEP, max_coords_per_param=5, seed=3)
        e2 = T.grad_check(build, [x, w], step=STEP, max_coords_per_param=5, seed=3)
        assert e1 == e2 and e1 <= TOL
