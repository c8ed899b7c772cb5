"""
Tests for tensors, the tape, primitive ops, the optimizer and grad_check.
"""
import numpy as np
import pytest

from autograd import (OptimState, Parameter, Tape, Tensor, backward, bilinear_sample, conv2d, grad_check,
                      lr_schedule, ops, paused, sgd_momentum_step)
from autograd.tensor import Function
from utils.errors import DisconnectedError, NumericError, ShapeError


def naive_conv2d(x, w, b, stride, pad, groups):
    n, c_in, h, wd = x.shape
    c_out, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    og = c_out // groups
    out = np.zeros((n, c_out, ho, wo))
    for bi in range(n):
        for o in range(c_out):
            g = o // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * xp[bi, g * cg + c, i * stride + u, j * stride + v]
                    out[bi, o, i, j] = acc
    return out


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_arrays_stay_float64(self):
        assert Tensor(np.zeros(3)).dtype == np.float64

    def test_item_requires_single_element(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_non_finite_result_raises(self):
        with pytest.raises(NumericError):
            ops.log(Tensor([0.0]))

    def test_recording_only_with_grad_inputs(self):
        with Tape() as tape:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    def test_paused_stops_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            with paused():
                ops.mul(x, 2.0)
        assert len(tape) == 0


class TestConv2d:
    def test_all_ones_sum(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(k), pad=1).data, x)

    def test_grouped_matches_naive_oracle(self, rng):
        x = rng.standard_normal((2, 4, 8, 8))
        w = rng.standard_normal((6, 2, 3, 3))
        b = rng.standard_normal(6)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1, groups=2)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 1, 2), atol=1e-5)

    def test_strided_matches_naive_oracle(self, rng):
        x = rng.standard_normal((1, 3, 7, 7))
        w = rng.standard_normal((2, 3, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), stride=2, pad=1)
        assert out.shape == (1, 2, 4, 4)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, None, 2, 1, 1), atol=1e-5)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))

    def test_gradients_are_linear_exact(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        assert grad_check(lambda a, b: conv2d(a, b, pad=1), [x, w]) < 1e-6


class TestBilinearSample:
    def test_lattice_point(self, rng):
        fmap = rng.standard_normal((2, 5, 6)).astype(np.float32)
        out = bilinear_sample(Tensor(fmap), 2.0, 3.0)
        np.testing.assert_allclose(out.data, fmap[:, 3, 2], atol=1e-6)

    def test_midpoint(self):
        fmap = np.array([[[0.0, 2.0]]], dtype=np.float32)
        assert bilinear_sample(Tensor(fmap), 0.5, 0.0).item() == pytest.approx(1.0)

    def test_far_out_of_bounds_is_zero(self, rng):
        fmap = rng.standard_normal((3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(bilinear_sample(Tensor(fmap), -5.0, 1.0).data, np.zeros(3))

    def test_gradient_wrt_map_and_coordinates(self, rng):
        fmap = Tensor(rng.standard_normal((2, 4, 4)))
        x, y = Tensor(np.array(1.3)), Tensor(np.array(2.6))
        assert grad_check(bilinear_sample, [fmap, x, y]) < 1e-4


class TestPrimitiveSuite:
    def test_softmax_symmetry(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.standard_normal((5, 7)) * 30)
        np.testing.assert_allclose(ops.softmax(x, axis=1).data.sum(axis=1), 1.0, atol=1e-6)

    def test_leaky_relu(self):
        assert ops.leaky_relu(Tensor([-1.0]), 0.2).item() == pytest.approx(-0.2)

    def test_global_avg_pool(self):
        x = Tensor(np.array([[[[1, 2], [3, 4]], [[1, 2], [3, 4]]]], dtype=np.float32))
        np.testing.assert_allclose(ops.global_avg_pool(x).data.reshape(-1), [2.5, 2.5])

    def test_channel_broadcast(self, rng):
        x = rng.standard_normal((1, 3, 2, 2)).astype(np.float32)
        w = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        np.testing.assert_allclose(ops.mul(Tensor(x), Tensor(w)).data, x * w[None, :, None, None])

    def test_mutual_broadcast_rejected(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.ones((3, 1))), Tensor(np.ones((1, 4))))

    def test_max_pool_and_max(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(ops.max_pool(x, 2).data.reshape(-1), [5, 7, 13, 15])
        np.testing.assert_array_equal(ops.max(x, axis=3).data.reshape(-1), [3, 7, 11, 15])

    def test_upsample2x_bilinear_preserves_constants(self):
        x = Tensor(np.full((1, 2, 3, 3), 0.7, dtype=np.float32))
        out = ops.upsample2x_bilinear(x)
        assert out.shape == (1, 2, 6, 6)
        np.testing.assert_allclose(out.data, 0.7, atol=1e-6)

    def test_concat(self):
        out = ops.concat([Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.ones((1, 3, 2, 2)))], axis=1)
        assert out.shape == (1, 5, 2, 2)

    @pytest.mark.parametrize("name, fn, shapes", [
        ("matmul", ops.matmul, [(3, 4), (4, 2)]),
        ("mul", ops.mul, [(2, 3), (2, 3)]),
        ("tanh", lambda x: ops.tanh(ops.tanh(x)), [(3, 4)]),
        ("sigmoid", ops.sigmoid, [(3, 4)]),
        ("softmax", lambda x: ops.softmax(x, axis=0), [(4, 3)]),
        ("leaky_relu", lambda x: ops.leaky_relu(x, 0.2), [(3, 4)]),
        ("global_avg_pool", ops.global_avg_pool, [(1, 3, 4, 4)]),
        ("max_pool", lambda x: ops.max_pool(x, 2), [(1, 2, 4, 4)]),
        ("upsample2x", ops.upsample2x_bilinear, [(1, 2, 3, 3)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=1), [(1, 2, 2, 2), (1, 1, 2, 2)]),
        ("div", ops.div, [(2, 2), (2, 2)]),
    ])
    def test_gradients(self, rng, name, fn, shapes):
        inputs = [Tensor(rng.uniform(0.5, 1.5, s) * rng.choice([-1, 1], s)) for s in shapes]
        if name == "div":
            inputs[1] = Tensor(rng.uniform(0.5, 1.5, shapes[1]))
        assert grad_check(fn, inputs) < 1e-4


class TestBackward:
    def test_sum(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_quadratic(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_shared_subexpression_adds_paths(self):
        x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
        with Tape() as tape:
            y = ops.tanh(x)
            loss = ops.sum(ops.add(ops.mul(y, 3.0), y))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 4.0 * (1 - np.tanh(x.data) ** 2))

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = ops.mul(x, 2.0)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_disconnected_loss(self):
        with Tape() as tape:
            loss = ops.sum(Tensor(np.ones(2)))
        with pytest.raises(DisconnectedError):
            backward(tape, loss)

    def test_unreached_parameter_gets_zero(self):
        a = Parameter(np.ones(2))
        b = Parameter(np.ones(3))
        with Tape() as tape:
            loss = ops.sum(a)
        grads = backward(tape, loss, wrt=[a, b])
        np.testing.assert_array_equal(grads[1], np.zeros(3))


class TestOptimizer:
    def test_zero_gradient_fixed_point(self):
        p = Parameter(np.array([0.3, -0.2]))
        sgd_momentum_step([p], [np.zeros(2)], OptimState())
        np.testing.assert_array_equal(p.data, [0.3, -0.2])

    def test_single_step(self):
        p = Parameter(np.array([1.0]))
        state = OptimState(base_lr=0.01, momentum=0.9)
        sgd_momentum_step([p], [np.ones(1)], state)
        assert p.data[0] == pytest.approx(0.99)
        assert state.velocity[0][0] == pytest.approx(1.0)
        assert state.step == 1

    def test_two_steps(self):
        p = Parameter(np.array([1.0]))
        state = OptimState(base_lr=0.01, momentum=0.9)
        for _ in range(2):
            sgd_momentum_step([p], [np.ones(1)], state)
        assert state.velocity[0][0] == pytest.approx(1.9)
        assert p.data[0] == pytest.approx(0.971, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_momentum_step([Parameter(np.ones(2))], [np.ones(3)], OptimState())


class TestLrSchedule:
    @pytest.mark.parametrize("step, expected", [(0, 0.01), (4999, 0.01), (5000, 0.001), (10000, 0.0001)])
    def test_step_decay(self, step, expected):
        assert lr_schedule(step, 0.01, 5000) == pytest.approx(expected)

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 0.01)


class _BrokenTanh(Function):
    def forward(self, x):
        return np.tanh(x)

    def backward(self, grad):
        return (grad * 1.5 * (1 - np.tanh(self.inputs[0].data) ** 2),)


class TestGradCheck:
    def test_linear_op(self, rng):
        assert grad_check(lambda a: ops.mul(a, 3.0), [Tensor(rng.standard_normal((3, 3)))]) < 1e-6

    def test_tanh_chain(self, rng):
        x = Tensor(rng.standard_normal((4, 4)))
        assert grad_check(lambda a: ops.tanh(ops.mul(ops.tanh(a), 2.0)), [x]) < 1e-4

    def test_detects_wrong_backward(self, rng):
        assert grad_check(_BrokenTanh.apply, [Tensor(rng.standard_normal(5))]) > 1e-2
