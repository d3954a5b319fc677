"""Tensor core: forward values, backward rules, and the op catalog."""

import numpy as np
import pytest

from timemae import autodiff as ad
from timemae.autodiff import Tensor
from timemae.errors import ContractError, DimensionError, OracleError, UnsupportedOpError


def t(data, grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        m = t([[2.0, -1.0], [0.5, 3.0]])
        eye = t(np.eye(2))
        out = ad.matmul(eye, m)
        assert np.allclose(out.data, m.data)

    def test_hand_computed(self):
        out = ad.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [1.0]]))
        assert np.allclose(out.data, [[3.0], [7.0]])

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = t(rng.standard_normal((3, 4)), grad=True)
        b = t(rng.standard_normal((4, 5)))
        err = ad.finite_diff_check(lambda x: ad.sum_(ad.matmul(x, b)), a, eps=1e-3)
        assert err < 1e-3
        err_b = ad.finite_diff_check(lambda x: ad.sum_(ad.matmul(a, x)), b, eps=1e-3)
        assert err_b < 1e-3

    def test_batched_broadcast_backward(self):
        rng = np.random.default_rng(1)
        a = t(rng.standard_normal((2, 3, 4)), grad=True)
        w = t(rng.standard_normal((4, 5)), grad=True)
        loss = ad.sum_(ad.matmul(a, w))
        ad.backward(loss)
        assert a.grad.shape == a.shape
        assert w.grad.shape == w.shape
        # weight gradient sums over the broadcast batch axis
        expect = np.einsum("bij,bik->jk", a.data, np.ones((2, 3, 5)))
        assert np.allclose(w.grad, expect, atol=1e-5)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc:
            ad.matmul(t(np.zeros((2, 3))), t(np.zeros((4, 5))))
        assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


class TestElementwise:
    def test_softmax_symmetry(self):
        out = ad.softmax(t([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-7)

    def test_cross_entropy_uniform(self):
        logits = t(np.zeros((1, 4)))
        loss = ad.cross_entropy(logits, np.array([2]))
        assert abs(loss.item() - np.log(4.0)) < 1e-6

    def test_stop_gradient_identity_and_zero_backward(self):
        x = t([[1.5, -2.0]], grad=True)
        y = ad.stop_gradient(x)
        assert y.data is x.data  # bitwise identity, shared storage
        loss = ad.sum_(ad.mul(y, y)) + ad.sum_(x)
        ad.backward(loss)
        # only the direct sum path contributes
        assert np.array_equal(x.grad, np.ones_like(x.data))

    def test_relu_and_gelu_grads(self):
        rng = np.random.default_rng(2)
        x = t(rng.standard_normal((4, 7)) + 0.1, grad=True)
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.mul(ad.relu(v), v)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.gelu(v)), x, 1e-4) < 1e-3

    def test_div_sub_pow_grads(self):
        rng = np.random.default_rng(3)
        x = t(rng.uniform(0.5, 2.0, (3, 3)), grad=True)
        c = t(rng.uniform(0.5, 2.0, (3, 3)))
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.div(c, v)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.sub(v, c)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.pow_const(v, 3.0)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.sqrt(v)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.log(v)), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: ad.sum_(ad.exp(v)), x, 1e-4) < 1e-3

    def test_broadcast_add_backward(self):
        x = t(np.ones((2, 3, 4)), grad=True)
        b = t(np.ones(4), grad=True)
        ad.backward(ad.sum_(ad.add(x, b)))
        assert x.grad.shape == (2, 3, 4)
        assert np.array_equal(b.grad, np.full(4, 6.0))

    def test_scalar_operand_keeps_dtype(self):
        x = t(np.ones((2, 2)))
        assert (2.0 * x).dtype == np.float32
        assert (x / 2.0).dtype == np.float32
        assert (1.0 - x).dtype == np.float32


class TestShapeOps:
    def test_concat_and_slice_roundtrip(self):
        rng = np.random.default_rng(4)
        a = t(rng.standard_normal((2, 3)), grad=True)
        b = t(rng.standard_normal((2, 5)), grad=True)
        cat = ad.concat([a, b], axis=1)
        back = ad.slice_axis(cat, 1, 0, 3)
        assert np.array_equal(back.data, a.data)
        ad.backward(ad.sum_(back))
        assert np.array_equal(a.grad, np.ones_like(a.data))
        assert np.array_equal(b.grad, np.zeros_like(b.data))

    def test_gather_rows_grad_only_into_gathered(self):
        x = t(np.arange(24, dtype=np.float32).reshape(2, 4, 3), grad=True)
        idx = np.array([[0, 2], [1, 3]])
        out = ad.gather_rows(x, idx)
        assert np.array_equal(out.data[0, 1], x.data[0, 2])
        ad.backward(ad.sum_(out))
        expect = np.zeros_like(x.data)
        expect[0, [0, 2]] = 1.0
        expect[1, [1, 3]] = 1.0
        assert np.array_equal(x.grad, expect)

    def test_gather_rows_out_of_range(self):
        x = t(np.zeros((1, 3, 2)))
        with pytest.raises(ContractError):
            ad.gather_rows(x, np.array([[3]]))

    def test_embedding_scatter_add(self):
        table = t(np.eye(4, dtype=np.float32), grad=True)
        idx = np.array([[1, 1], [0, 3]])
        out = ad.embedding(table, idx)
        assert out.shape == (2, 2, 4)
        ad.backward(ad.sum_(out))
        # each selected row accumulates one unit per selection, in every column
        counts = np.array([1.0, 2.0, 0.0, 1.0])
        assert np.array_equal(table.grad, np.tile(counts[:, None], (1, 4)))

    def test_mean_axis_grad(self):
        x = t(np.ones((2, 4)), grad=True)
        ad.backward(ad.sum_(ad.mean(x, axis=1)))
        assert np.allclose(x.grad, 0.25)


class TestBackwardDriver:
    def test_sum_grad_is_ones(self):
        x = t(np.random.default_rng(5).standard_normal((3, 2, 4)), grad=True)
        ad.backward(ad.sum_(x))
        assert np.array_equal(x.grad, np.ones_like(x.data))

    def test_mse_at_minimum_has_zero_grad(self):
        x = t([[1.0, 2.0], [3.0, 4.0]], grad=True)
        loss = ad.mse(x, x.detach())
        ad.backward(loss)
        assert loss.item() == 0.0
        assert np.allclose(x.grad, 0.0)

    def test_composite_ce_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        logits = t(rng.standard_normal((2, 5)), grad=True)
        targets = np.array([1, 4])
        err = ad.finite_diff_check(lambda v: ad.cross_entropy(v, targets), logits, 1e-3)
        assert err < 1e-3

    def test_non_scalar_loss_rejected(self):
        x = t(np.ones((2, 2)), grad=True)
        with pytest.raises(ContractError):
            ad.backward(ad.mul(x, x))

    def test_backward_is_linear(self):
        rng = np.random.default_rng(7)
        base = rng.standard_normal((3, 3)).astype(np.float32)

        def grad_of(a, b):
            x = t(base, grad=True)
            loss1 = ad.sum_(ad.mul(x, x))
            loss2 = ad.sum_(ad.exp(x))
            ad.backward(ad.add(ad.mul(loss1, a), ad.mul(loss2, b)))
            return x.grad

        g10 = grad_of(1.0, 0.0)
        g01 = grad_of(0.0, 1.0)
        g = grad_of(2.0, 3.0)
        assert np.allclose(g, 2.0 * g10 + 3.0 * g01, atol=1e-6)

    def test_grad_accumulates_until_zeroed(self):
        x = t(np.ones(3), grad=True)
        for _ in range(2):
            ad.backward(ad.sum_(x))
        assert np.array_equal(x.grad, np.full(3, 2.0))
        x.zero_grad()
        assert x.grad is None

    def test_unsupported_op_error(self):
        x = t(np.ones(2), grad=True)
        broken = Tensor(x.data, requires_grad=True, _parents=(x,), _backward=None)
        with pytest.raises(UnsupportedOpError):
            ad.backward(ad.sum_(broken))


class TestLayerNormDropout:
    def test_layer_norm_normalizes(self):
        rng = np.random.default_rng(8)
        x = t(rng.standard_normal((5, 16)) * 3 + 1)
        out = ad.layer_norm(x, t(np.ones(16)), t(np.zeros(16)))
        assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(out.data.std(axis=-1), 1.0, atol=1e-3)

    def test_layer_norm_grads(self):
        rng = np.random.default_rng(9)
        x = t(rng.standard_normal((4, 8)), grad=True)
        gain = t(rng.uniform(0.5, 1.5, 8), grad=True)
        bias = t(rng.uniform(-0.5, 0.5, 8), grad=True)
        w = t(rng.standard_normal((4, 8)))

        def loss_wrt(v, which):
            parts = {"x": x, "gain": gain, "bias": bias}
            parts[which] = v
            return ad.sum_(ad.mul(w, ad.layer_norm(parts["x"], parts["gain"], parts["bias"])))

        assert ad.finite_diff_check(lambda v: loss_wrt(v, "x"), x, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: loss_wrt(v, "gain"), gain, 1e-4) < 1e-3
        assert ad.finite_diff_check(lambda v: loss_wrt(v, "bias"), bias, 1e-4) < 1e-3

    def test_dropout_eval_is_identity(self):
        x = t(np.random.default_rng(10).standard_normal((3, 3)))
        out = ad.dropout(x, 0.5, train=False)
        assert out is x

    def test_dropout_train_masks_and_scales(self):
        x = t(np.ones((100, 100)), grad=True)
        rng = np.random.default_rng(11)
        out = ad.dropout(x, 0.25, train=True, rng=rng)
        kept = out.data != 0
        assert abs(kept.mean() - 0.75) < 0.02
        assert np.allclose(out.data[kept], 1.0 / 0.75)
        ad.backward(ad.sum_(out))
        assert np.array_equal(x.grad != 0, kept)


class TestConv1d:
    def test_matches_direct_computation(self):
        rng = np.random.default_rng(12)
        x = t(rng.standard_normal((2, 9, 3)))
        w = t(rng.standard_normal((4, 3, 5)))
        b = t(rng.standard_normal(5))
        out = ad.conv1d(x, w, b, stride=2)
        assert out.shape == (2, 3, 5)
        for pos in range(3):
            window = x.data[:, pos * 2 : pos * 2 + 4, :].reshape(2, -1)
            expect = window @ w.data.reshape(-1, 5) + b.data
            assert np.allclose(out.data[:, pos], expect, atol=1e-6)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = t(rng.standard_normal((1, 8, 2)), grad=True)
        w = t(rng.standard_normal((3, 2, 4)), grad=True)
        b = t(rng.standard_normal(4), grad=True)
        mix = t(rng.standard_normal((1, 2, 4)))

        def loss(v, which):
            parts = {"x": x, "w": w, "b": b}
            parts[which] = v
            return ad.sum_(ad.mul(mix, ad.conv1d(parts["x"], parts["w"], parts["b"], stride=3)))

        assert ad.finite_diff_check(lambda v: loss(v, "x"), x, 1e-3) < 1e-3
        assert ad.finite_diff_check(lambda v: loss(v, "w"), w, 1e-3) < 1e-3
        assert ad.finite_diff_check(lambda v: loss(v, "b"), b, 1e-3) < 1e-3

    def test_overlapping_windows_grad(self):
        rng = np.random.default_rng(14)
        x = t(rng.standard_normal((1, 6, 1)), grad=True)
        w = t(rng.standard_normal((3, 1, 2)))
        assert ad.finite_diff_check(
            lambda v: ad.sum_(ad.conv1d(v, w, None, stride=1)), x, 1e-3
        ) < 1e-3


class TestStraightThrough:
    def test_forward_is_hard_bitwise(self):
        rng = np.random.default_rng(15)
        soft = t(rng.random((10, 4)), grad=True)
        hard = (rng.random((10, 4)) > 0.5).astype(np.float32)
        out = ad.straight_through(soft, hard)
        assert np.array_equal(out.data, hard)

    def test_backward_routes_to_soft(self):
        soft = t(np.zeros((2, 3)), grad=True)
        hard = np.ones((2, 3), dtype=np.float32)
        w = np.arange(6, dtype=np.float32).reshape(2, 3)
        ad.backward(ad.sum_(ad.mul(ad.straight_through(soft, hard), t(w))))
        assert np.array_equal(soft.grad, w)


class TestOracle:
    def test_self_test_sum_of_squares(self):
        rng = np.random.default_rng(16)
        x = t(rng.standard_normal((4, 4)), grad=True)
        err = ad.finite_diff_check(lambda v: ad.sum_(ad.mul(v, v)), x, 1e-3)
        assert err < 1e-4

    def test_layer_norm_then_sum(self):
        rng = np.random.default_rng(17)
        x = t(rng.standard_normal((4, 8)), grad=True)
        gain = t(rng.uniform(0.5, 1.5, 8))
        bias = t(rng.uniform(-0.5, 0.5, 8))
        err = ad.finite_diff_check(
            lambda v: ad.sum_(ad.layer_norm(v, gain, bias)), x, 1e-4
        )
        assert err < 1e-3

    def test_nondeterministic_f_rejected(self):
        state = {"n": 0}

        def f(v):
            state["n"] += 1
            return ad.sum_(ad.mul(v, float(state["n"])))

        with pytest.raises(OracleError):
            ad.finite_diff_check(f, t(np.ones(2)), 1e-3)

    def test_catalog_is_complete(self):
        catalog = ad.op_catalog()
        for name in (
            "add", "sub", "mul", "div", "exp", "log", "sqrt", "gelu", "relu",
            "softmax", "layer_norm", "dropout", "conv1d", "embedding",
            "gather_rows", "mean", "sum", "concat", "slice_axis",
            "cross_entropy", "mse", "stop_gradient", "matmul", "straight_through",
        ):
            assert name in catalog, name
