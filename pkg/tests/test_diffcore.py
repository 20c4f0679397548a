import math

import numpy as np
import pytest

import vastsum.diffcore as dc
from vastsum.errors import NumericError, ShapeError


def fresh(value):
    tape = dc.Tape()
    return tape, tape.constant(np.asarray(value, dtype=np.float64))


class TestForwardValues:
    def test_sigmoid_at_zero(self):
        _, x = fresh([0.0])
        assert dc.sigmoid(x).value[0] == 0.5

    def test_softmax_single_key(self):
        _, x = fresh([[3.7]])
        assert dc.softmax_rows(x).value.tolist() == [[1.0]]

    def test_layer_norm_hand_value(self):
        _, x = fresh([1.0, 2.0, 3.0])
        out = dc.layer_norm(x).value
        # (x - mean) / sqrt(var + 1e-5) computed by hand
        expected = [(v - 2.0) / math.sqrt(2.0 / 3.0 + 1e-5) for v in [1.0, 2.0, 3.0]]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out, [-1.22474, 0.0, 1.22474], atol=1e-4)

    def test_gelu_exact_form(self):
        _, x = fresh([2.0])
        expected = 2.0 * 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))
        assert dc.gelu(x).value[0] == pytest.approx(expected, abs=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            _, x = fresh(rng.standard_normal((4, 6)) * 10)
            sums = dc.softmax_rows(x).value.sum(axis=-1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_clip_clamps(self):
        _, x = fresh([-20.0, 0.0, 12.0])
        assert dc.clip(x, -10.0, 5.0).value.tolist() == [-10.0, 0.0, 5.0]

    def test_clip_invalid_bounds(self):
        _, x = fresh([0.0])
        with pytest.raises(ValueError, match="exceeds"):
            dc.clip(x, 1.0, -1.0)

    def test_matmul_shape_mismatch(self):
        tape = dc.Tape()
        a = tape.constant(np.ones((2, 3)))
        b = tape.constant(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            dc.matmul(a, b)

    def test_add_shape_mismatch(self):
        tape = dc.Tape()
        a = tape.constant(np.ones((2, 3)))
        b = tape.constant(np.ones((4,)))
        with pytest.raises(ShapeError):
            dc.add(a, b)

    def test_primitive_dispatch_covers_catalog(self):
        kinds = {
            "matmul", "add", "subtract", "elementwise-multiply", "mean-over-set",
            "layer-norm", "softmax-rows", "gelu", "sigmoid", "exp", "log", "square",
            "clip", "gather-rows", "depthwise-conv1d", "pointwise-conv1d",
            "concat-last-dim", "scalar-scale",
        }
        assert set(dc.PRIMITIVES) == kinds
        _, x = fresh([0.0])
        assert dc.primitive_forward("sigmoid", x).value[0] == 0.5
        with pytest.raises(ValueError, match="unknown primitive"):
            dc.primitive_forward("transpose", x)


class TestBackward:
    def test_sigmoid_derivative_at_zero(self):
        tape = dc.Tape()
        x = tape.param("x", np.array([0.0]))
        loss = dc.sigmoid(x)
        grads = dc.backward(tape, loss)
        assert grads["x"][0] == 0.25

    def test_softmax_sum_has_zero_gradient(self):
        tape = dc.Tape()
        x = tape.param("x", np.array([0.0, 0.0]))
        p = dc.softmax_rows(x)
        loss = dc.scale(dc.mean_over_sets(p, [(0, 1)]), 2.0)  # sum of the row
        grads = dc.backward(tape, loss)
        assert np.all(np.abs(grads["x"]) <= 1e-10)

    def test_softmax_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(5)
        tape = dc.Tape()
        x = tape.param("x", rng.standard_normal((3, 4)))
        p = dc.softmax_rows(x)
        weights = tape.constant(rng.standard_normal((3, 4)))
        loss = dc.mean_over_sets(dc.matmul(dc.multiply(p, weights), tape.constant(np.ones(4))), [(0, 1, 2)])
        grads = dc.backward(tape, loss)
        np.testing.assert_allclose(grads["x"].sum(axis=-1), 0.0, atol=1e-10)

    def test_heteroscedastic_integrand_hand_gradients(self):
        # 0.5 * (log v + (y - mu)^2 / v) at mu=0, y=2, log v=0:
        # d/dmu = -(y - mu)/v = -2, d/dlogv = 0.5 * (1 - (y-mu)^2/v) = -1.5
        tape = dc.Tape()
        mu = tape.param("mu", np.array([0.0]))
        log_v = tape.param("log_v", np.array([0.0]))
        y = tape.constant(np.array([2.0]))
        resid_sq = dc.square(dc.subtract(y, mu))
        loss = dc.scale(dc.add(log_v, dc.multiply(resid_sq, dc.exp(dc.scale(log_v, -1.0)))), 0.5)
        grads = dc.backward(tape, loss)
        assert grads["mu"][0] == pytest.approx(-2.0, abs=1e-12)
        assert grads["log_v"][0] == pytest.approx(-1.5, abs=1e-12)

    def test_non_scalar_loss_rejected(self):
        tape = dc.Tape()
        x = tape.param("x", np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            dc.backward(tape, dc.square(x))

    def test_nan_raises_numeric_error_with_node_id(self):
        tape = dc.Tape()
        x = tape.param("x", np.array([-1.0]))
        with np.errstate(invalid="ignore"):
            bad = dc.log(x)  # forward NaN
        loss = dc.mean_over_sets(bad, [(0,)])
        with pytest.raises(NumericError) as excinfo:
            dc.backward(tape, loss)
        assert excinfo.value.node_id == bad.nid
        assert "log" in str(excinfo.value)

    def test_backward_twice_bit_identical(self):
        rng = np.random.default_rng(11)
        tape = dc.Tape()
        w = tape.param("w", rng.standard_normal((4, 3)))
        x = tape.constant(rng.standard_normal((5, 4)))
        h = dc.gelu(dc.matmul(x, w))
        loss = dc.mean_over_sets(dc.matmul(h, tape.constant(np.ones(3))), [range(5)])
        first = dc.backward(tape, loss)
        second = dc.backward(tape, loss)
        assert np.array_equal(first["w"], second["w"])

    def test_unreachable_param_gets_zero_gradient(self):
        tape = dc.Tape()
        used = tape.param("used", np.array([2.0]))
        unused = tape.param("unused", np.ones((2, 2)))
        grads = dc.backward(tape, dc.square(used))
        assert grads["used"][0] == 4.0
        assert np.array_equal(grads["unused"], np.zeros((2, 2)))


def _check(build, params, tol=1e-4, step=1e-4):
    err = dc.finite_difference_check(build, params, step)
    assert err < tol, f"finite-difference error {err}"


class TestPrimitiveGradients:
    """Every primitive, composed into a random scalar loss, matches central
    differences within 1e-4 relative error (away from clip boundaries)."""

    def test_dense_chain(self):
        rng = np.random.default_rng(21)
        params = {
            "w1": rng.standard_normal((4, 6)) * 0.5,
            "b1": rng.standard_normal(6) * 0.1,
            "w2": rng.standard_normal((6, 2)) * 0.5,
        }
        x = rng.standard_normal((5, 4))

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            h = dc.gelu(dc.add(dc.matmul(tape.constant(x), p["w1"]), p["b1"]))
            h = dc.sigmoid(dc.matmul(h, p["w2"]))
            return dc.mean_over_sets(dc.matmul(h, tape.constant(np.ones(2))), [range(5)])

        _check(build, params)

    def test_norm_softmax_attention_block(self):
        rng = np.random.default_rng(22)
        params = {"q": rng.standard_normal((3, 4)) * 0.3, "k": rng.standard_normal((3, 4)) * 0.3}

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            attn = dc.softmax_rows(dc.scale(dc.matmul(p["q"], p["k"], transpose_b=True), 0.5))
            mixed = dc.matmul(attn, dc.layer_norm(p["k"]))
            return dc.mean_over_sets(dc.matmul(mixed, tape.constant(np.ones(4))), [range(3)])

        _check(build, params)

    def test_exp_log_square_scale(self):
        rng = np.random.default_rng(23)
        params = {"x": rng.uniform(0.5, 2.0, 6)}

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            y = dc.log(dc.add(dc.square(p["x"]), tape.constant(np.full(6, 0.7))))
            y = dc.exp(dc.scale(y, -0.5))
            return dc.mean_over_sets(y, [range(6)])

        _check(build, params)

    def test_clip_interior(self):
        params = {"x": np.array([-0.5, 0.3, 0.9])}  # well inside [-2, 2]

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            return dc.mean_over_sets(dc.square(dc.clip(p["x"], -2.0, 2.0)), [range(3)])

        _check(build, params)

    def test_gather_concat_subtract_multiply(self):
        rng = np.random.default_rng(24)
        params = {"a": rng.standard_normal((4, 3)), "b": rng.standard_normal((4, 2))}

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            cat = dc.concat_last([p["a"], p["b"]])
            picked = dc.gather_rows(cat, [0, 2, 2, 3])
            diff = dc.subtract(picked, dc.gather_rows(cat, [1, 1, 0, 2]))
            prod = dc.multiply(diff, diff)
            return dc.mean_over_sets(dc.matmul(prod, tape.constant(np.ones(5))), [range(4)])

        _check(build, params)

    def test_conv_blocks(self):
        rng = np.random.default_rng(25)
        params = {
            "dw": rng.standard_normal((3, 5)) * 0.4,
            "pw": rng.standard_normal((3, 3)) * 0.4,
            "pb": rng.standard_normal(3) * 0.1,
        }
        x = rng.standard_normal((7, 3))

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            h = dc.gelu(dc.depthwise_conv1d(tape.constant(x), p["dw"]))
            h = dc.pointwise_conv1d(h, p["pw"], p["pb"])
            return dc.mean_over_sets(dc.matmul(h, tape.constant(np.ones(3))), [range(7)])

        _check(build, params)

    def test_mean_over_sets_partial_and_empty(self):
        rng = np.random.default_rng(26)
        params = {"x": rng.standard_normal((6, 2))}

        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            pooled = dc.mean_over_sets(p["x"], [(0, 1, 4), (), (2,)])
            return dc.mean_over_sets(dc.matmul(dc.square(pooled), tape.constant(np.ones(2))), [range(3)])

        _check(build, params)


class TestFiniteDifferenceCheck:
    def test_square_at_three(self):
        def build(theta):
            tape = dc.Tape()
            p = dc.lift_params(tape, theta)
            return dc.square(p["x"])

        params = {"x": np.array([3.0])}
        loss = build(params)
        assert dc.backward(loss.tape, loss)["x"][0] == 6.0
        assert dc.finite_difference_check(build, params) < 1e-6

    def test_constant_function_has_zero_error(self):
        def build(theta):
            tape = dc.Tape()
            dc.lift_params(tape, theta)
            return tape.constant(np.array([5.0]))

        assert dc.finite_difference_check(build, {"x": np.array([1.0, 2.0])}) == 0.0
