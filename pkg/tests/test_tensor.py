"""Autodiff core: forward values, gradient rules, optimizer, determinism."""

import numpy as np
import pytest

from vtt.errors import ShapeError, UsageError, ValidationError
from vtt.gradcheck import finite_diff_check
from vtt.optim import AdamState, adam_step
from vtt.rng import SeededRng
from vtt.tensor import (Tensor, add, backward, bce_with_logits, clamp, concat,
                        gelu, layer_norm, linear, linear_gelu, linear_relu,
                        matmul, mean_, mul, narrow, relu, reshape, sigmoid,
                        softmax_rows, sub, sum_, swapaxes, tanh, tensor,
                        zero_grads)


def t(data, rg=False):
    return tensor(np.asarray(data, dtype=np.float32), requires_grad=rg)


class TestMatmul:
    def test_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(t(np.eye(2)), a)
        assert np.allclose(out.data, a.data)

    def test_selector_row(self):
        out = matmul(t([[1.0, 0.0], [0.0, 0.0]]), t([[5.0, 6.0], [7.0, 8.0]]))
        assert np.allclose(out.data, [[5.0, 6.0], [0.0, 0.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))

    def test_gradient_matches_central_differences(self):
        rng = SeededRng(3)
        a = Tensor(rng.normal((3, 4)).astype(np.float32), requires_grad=True)
        b = rng.normal((4, 2)).astype(np.float32)

        def f(p):
            return sum_(matmul(p["a"], tensor(b.astype(p["a"].dtype))))

        report = finite_diff_check(f, {"a": a}, step=1e-3)
        assert report.max_rel_err < 1e-4

    def test_batched_matmul_gradient(self):
        rng = SeededRng(4)
        a = Tensor(rng.normal((2, 3, 4)).astype(np.float32), requires_grad=True)
        w = Tensor(rng.normal((4, 5)).astype(np.float32), requires_grad=True)

        def f(p):
            return sum_(mul(matmul(p["a"], p["w"]), matmul(p["a"], p["w"])))

        report = finite_diff_check(f, {"a": a, "w": w}, step=1e-4)
        assert report.max_rel_err < 1e-4


class TestSoftmax:
    def test_symmetry(self):
        out = softmax_rows(t([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]])

    def test_large_logit_no_overflow(self):
        out = softmax_rows(t([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        assert abs(out.data[0, 0] - 1.0) < 1e-6
        assert abs(out.data[0, 1]) < 1e-6

    def test_analytic_exponentials(self):
        out = softmax_rows(t([[np.log(2.0), 0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.25, 0.25]], atol=1e-6)

    def test_rows_sum_to_one_property(self):
        for seed in range(25):
            x = SeededRng(seed).uniform((6, 9), -50.0, 50.0).astype(np.float32)
            rows = softmax_rows(t(x)).data.sum(axis=-1)
            assert np.abs(rows - 1.0).max() < 1e-6


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = layer_norm(t([[3.0, 3.0, 3.0, 3.0]]), t(np.ones(4)), t(np.zeros(4)))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_already_normalized(self):
        out = layer_norm(t([[1.0, -1.0]]), t(np.ones(2)), t(np.zeros(2)))
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-3)

    def test_rejects_width_one(self):
        with pytest.raises(ShapeError):
            layer_norm(t([[1.0]]), t(np.ones(1)), t(np.zeros(1)))

    def test_gradient(self):
        rng = SeededRng(9)
        x = Tensor(rng.normal((2, 8)).astype(np.float32), requires_grad=True)
        g = Tensor(rng.normal((8,)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.normal((8,)).astype(np.float32), requires_grad=True)

        def f(p):
            return sum_(mul(layer_norm(p["x"], p["g"], p["b"]),
                            layer_norm(p["x"], p["g"], p["b"])))

        report = finite_diff_check(f, {"x": x, "g": g, "b": b}, step=1e-4)
        assert report.max_rel_err < 1e-4


class TestActivations:
    def test_fixed_points(self):
        assert gelu(t([0.0])).data[0] == 0.0
        assert relu(t([-1.0])).data[0] == 0.0
        assert sigmoid(t([0.0])).data[0] == pytest.approx(0.5)

    def test_gelu_asymptote(self):
        assert abs(gelu(t([10.0])).data[0] - 10.0) < 1e-3

    def test_gradients_match_finite_differences(self):
        xs = SeededRng(12).normal((16,), 0.0, 2.0).astype(np.float32)
        for op in (gelu, relu, sigmoid, tanh):
            x = Tensor(xs.copy(), requires_grad=True)
            report = finite_diff_check(lambda p, op=op: sum_(op(p["x"])), {"x": x},
                                       step=1e-4)
            assert report.max_rel_err < 1e-4, op.__name__

    def test_fused_linear_variants_match_composition(self):
        rng = SeededRng(5)
        x = rng.normal((3, 6)).astype(np.float32)
        w = Tensor(rng.normal((6, 4)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.normal((4,)).astype(np.float32), requires_grad=True)
        fused = linear_gelu(t(x), w, b)
        composed = gelu(add(matmul(t(x), w), b))
        assert np.allclose(fused.data, composed.data, atol=1e-6)
        fused_r = linear_relu(t(x), w, b)
        composed_r = relu(add(matmul(t(x), w), b))
        assert np.allclose(fused_r.data, composed_r.data, atol=1e-7)

        def f(p):
            return sum_(mul(linear_gelu(t(x), p["w"], p["b"]),
                            linear_gelu(t(x), p["w"], p["b"])))

        report = finite_diff_check(f, {"w": w, "b": b}, step=1e-4)
        assert report.max_rel_err < 1e-4


class TestBceWithLogits:
    def test_zero_logit_target_one(self):
        out = bce_with_logits(t([[0.0]]), np.array([[1.0]]))
        assert out.item() == pytest.approx(np.log(2.0), rel=1e-5)

    def test_saturated_correct_prediction(self):
        out = bce_with_logits(t([[100.0]]), np.array([[1.0]]))
        assert np.isfinite(out.item())
        assert out.item() < 1e-6

    def test_negative_logit_target_zero(self):
        out = bce_with_logits(t([[-3.0]]), np.array([[0.0]]))
        assert out.item() == pytest.approx(np.log1p(np.exp(-3.0)), rel=1e-4)

    def test_rejects_soft_targets(self):
        with pytest.raises(ValidationError):
            bce_with_logits(t([[0.0]]), np.array([[0.5]]))

    def test_gradient(self):
        rng = SeededRng(17)
        x = Tensor(rng.normal((5, 1)).astype(np.float32), requires_grad=True)
        targets = (rng.uniform((5, 1)) > 0.5).astype(np.float32)
        report = finite_diff_check(lambda p: bce_with_logits(p["x"], targets),
                                   {"x": x}, step=1e-4)
        assert report.max_rel_err < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(SeededRng(0).normal((3, 4)).astype(np.float32), requires_grad=True)
        backward(sum_(x))
        assert np.allclose(x.grad, 1.0)

    def test_quadratic_gives_x(self):
        x = Tensor(SeededRng(1).normal((4, 2)).astype(np.float32), requires_grad=True)
        backward(mul(sum_(mul(x, x)), 0.5))
        assert np.allclose(x.grad, x.data, atol=1e-6)

    def test_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(UsageError):
            backward(add(x, 1.0))

    def test_accumulates_across_calls(self):
        x = Tensor(SeededRng(2).normal((3,)).astype(np.float32), requires_grad=True)
        loss = sum_(mul(x, x))
        backward(loss)
        g1 = x.grad.copy()
        backward(loss)
        assert np.allclose(x.grad, 2.0 * g1, atol=1e-6)

    def test_shared_subexpression_two_path_chain_rule(self):
        # y = u*u with u = 2x: dy/dx = 8x via both paths through u
        x = Tensor(np.array([1.5], dtype=np.float32), requires_grad=True)
        u = mul(x, 2.0)
        y = sum_(mul(u, u))
        backward(y)
        assert np.allclose(x.grad, 8.0 * x.data, atol=1e-6)

    def test_clear_graph_first_resets(self):
        x = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
        loss = sum_(mul(x, x))
        backward(loss)
        backward(loss, clear_graph_first=True)
        assert np.allclose(x.grad, 2.0 * x.data, atol=1e-6)

    def test_shape_ops_route_gradients(self):
        rng = SeededRng(21)
        x = Tensor(rng.normal((2, 3, 4)).astype(np.float32), requires_grad=True)

        def f(p):
            y = swapaxes(p["x"], 0, 1)
            y = reshape(y, (3, 8))
            y = concat([narrow(y, 1, 0, 5), narrow(y, 1, 5, 3)], axis=1)
            return sum_(mul(y, y))

        report = finite_diff_check(f, {"x": x}, step=1e-4)
        assert report.max_rel_err < 1e-4

    def test_all_grads_finite_after_backward(self):
        rng = SeededRng(30)
        x = Tensor(rng.normal((4, 4)).astype(np.float32), requires_grad=True)
        y = sum_(sigmoid(matmul(x, x)))
        backward(y)
        assert np.all(np.isfinite(x.grad))


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = {"w": Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)}
        state = AdamState(p, lr=0.1)
        before = p["w"].data.copy()
        adam_step(p, {"w": np.zeros(2, dtype=np.float32)}, state)
        assert np.allclose(p["w"].data, before)

    def test_descends_on_square(self):
        p = {"w": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
        state = AdamState(p, lr=0.1)
        adam_step(p, {"w": 2.0 * p["w"].data}, state)
        assert abs(p["w"].data[0]) < 1.0

    def test_converges_on_2d_quadratic(self):
        p = {"w": Tensor(np.array([1.0, -1.5], dtype=np.float32), requires_grad=True)}
        state = AdamState(p, lr=0.05)
        for _ in range(200):
            adam_step(p, {"w": 2.0 * p["w"].data}, state)
        loss = float((p["w"].data ** 2).sum())
        assert loss < 1e-3

    def test_shape_mismatch_rejected(self):
        p = {"w": Tensor(np.zeros(3), requires_grad=True)}
        state = AdamState(p)
        with pytest.raises(ShapeError):
            adam_step(p, {"w": np.zeros(4, dtype=np.float32)}, state)


class TestFiniteDiffCheck:
    def test_small_sigmoid_net(self):
        rng = SeededRng(40)
        w = Tensor((rng.normal((4, 3)) * 0.3).astype(np.float32), requires_grad=True)
        x = rng.normal((2, 4)).astype(np.float32)

        def f(p):
            return sum_(sigmoid(matmul(tensor(x.astype(p["w"].dtype)), p["w"])))

        report = finite_diff_check(f, {"w": w})
        assert report.max_rel_err < 1e-4

    def test_wrong_gradient_rule_is_caught(self):
        # a deliberately wrong backward: reports dx = 3x for y = x^2
        def bad_square(x):
            out = Tensor(x.data * x.data, requires_grad=True, _parents=(x,),
                         _backward=lambda g: None)

            def bw(g):
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad += g * 3.0 * x.data

            out._backward = bw
            return out

        w = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        report = finite_diff_check(lambda p: sum_(bad_square(p["w"])), {"w": w})
        assert report.max_rel_err > 1e-3

    def test_primitive_sweep_over_seeds(self):
        for seed in range(20):
            rng = SeededRng(seed)
            x = Tensor((rng.normal((3, 5)) * 0.8).astype(np.float32), requires_grad=True)

            def f(p):
                y = softmax_rows(p["x"])
                y = mul(y, sigmoid(p["x"]))
                y = add(y, gelu(sub(p["x"], 0.3)))
                y = mul(y, tanh(clamp(p["x"], -0.9, 0.9)))
                return mean_(mul(y, y))

            report = finite_diff_check(f, {"x": x}, step=1e-4)
            assert report.max_rel_err < 1e-3, f"seed {seed}"


class TestDeterminism:
    def test_training_loss_sequence_bit_identical(self):
        def run():
            rng = SeededRng(123)
            w = Tensor((rng.normal((6, 3)) * 0.5).astype(np.float32), requires_grad=True)
            b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
            params = {"w": w, "b": b}
            state = AdamState(params, lr=1e-2)
            x = rng.normal((20, 6)).astype(np.float32)
            y = rng.normal((20, 3)).astype(np.float32)
            losses = []
            for _ in range(100):
                zero_grads(params)
                err = sub(linear(tensor(x), w, b), tensor(y))
                loss = mean_(mul(err, err))
                backward(loss)
                state.step(params)
                losses.append(loss.data.copy())
            return np.asarray(losses)

        a, b = run(), run()
        assert np.array_equal(a, b)
