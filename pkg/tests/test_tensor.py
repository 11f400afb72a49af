import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from listenhead import tensor as tn
from listenhead.gradcheck import NonDeterministicError, analytic_gradients, grad_check
from listenhead.tensor import ContractError, GradTape, NumericalError, Tensor, backward


def conv_bruteforce(x, w, b, d):
    c_out, c_in, K = w.shape
    T = x.shape[1]
    out = np.zeros((c_out, T))
    for o in range(c_out):
        for t in range(T):
            acc = b[o]
            for k in range(K):
                src = t - k * d
                if src < 0:
                    continue
                for i in range(c_in):
                    acc += w[o, i, k] * x[i, src]
            out[o, t] = acc
    return out


def conv(x, w, b, d):
    return tn.conv1d_causal_dilated(Tensor(x), Tensor(w), Tensor(b), d).data


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(1, 9))
        np.testing.assert_array_equal(conv(x, np.ones((1, 1, 1)), np.zeros(1), 3), x)

    def test_impulse_reads_off_taps(self):
        x = np.zeros((1, 12))
        x[0, 5] = 1.0
        out = conv(x, np.array([[[0.7, -1.3]]]), np.zeros(1), 2)[0]
        expected = np.zeros(12)
        expected[5], expected[7] = 0.7, -1.3
        np.testing.assert_array_equal(out, expected)

    @pytest.mark.parametrize("K,d", [(1, 1), (2, 1), (3, 2), (4, 5)])
    def test_first_step_sees_only_tap_zero(self, K, d):
        rng = np.random.default_rng(K * 10 + d)
        x, w, b = rng.normal(size=(2, 6)), rng.normal(size=(3, 2, K)), rng.normal(size=3)
        np.testing.assert_allclose(conv(x, w, b, d)[:, 0], w[:, :, 0] @ x[:, 0] + b, rtol=1e-14)

    @pytest.mark.parametrize("K,d,T", [(2, 1, 7), (3, 2, 10), (2, 4, 5), (5, 3, 20)])
    def test_matches_bruteforce(self, K, d, T):
        rng = np.random.default_rng(T)
        x, w, b = rng.normal(size=(3, T)), rng.normal(size=(2, 3, K)), rng.normal(size=2)
        np.testing.assert_allclose(conv(x, w, b, d), conv_bruteforce(x, w, b, d), rtol=1e-12,
                                   atol=1e-13)

    def test_channel_mismatch(self):
        with pytest.raises(ContractError):
            conv(np.zeros((2, 4)), np.zeros((1, 3, 2)), np.zeros(1), 1)

    def test_bad_dilation(self):
        with pytest.raises(ContractError):
            conv(np.zeros((1, 4)), np.zeros((1, 1, 2)), np.zeros(1), 0)

    @pytest.mark.parametrize("K,d", [(2, 1), (2, 2), (3, 3)])
    def test_causality_exhaustive(self, K, d):
        rng = np.random.default_rng(1)
        T = 8
        x, w, b = rng.normal(size=(2, T)), rng.normal(size=(2, 2, K)), rng.normal(size=2)
        base = conv(x, w, b, d)
        for t in range(T):
            x2 = x.copy()
            x2[:, t] += rng.normal(size=2)
            out = conv(x2, w, b, d)
            np.testing.assert_array_equal(out[:, :t], base[:, :t])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 12),
           st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
    def test_linearity(self, K, d, T, a, c, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, T)), rng.normal(size=(2, T))
        w, zero = rng.normal(size=(3, 2, K)), np.zeros(3)
        lhs = conv(a * x + c * y, w, zero, d)
        rhs = a * conv(x, w, zero, d) + c * conv(y, w, zero, d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestAffine:
    def test_identity(self):
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(tn.affine(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)

    def test_zero_weight_gives_bias(self):
        b = np.array([4.0, -1.0])
        out = tn.affine(Tensor(np.ones(3)), Tensor(np.zeros((2, 3))), Tensor(b)).data
        np.testing.assert_array_equal(out, b)

    def test_hand_arithmetic(self):
        out = tn.affine(Tensor([1.0, 1.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [3.0, 7.0])

    def test_mismatch(self):
        with pytest.raises(ContractError):
            tn.affine(Tensor(np.ones(3)), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))


class TestTensor:
    def test_rejects_nan_input(self):
        with pytest.raises(NumericalError):
            Tensor([1.0, np.nan])

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_debug_mode_flags_overflow(self):
        tn.set_debug(True)
        try:
            with pytest.raises(NumericalError):
                tn.mul(Tensor([1e200]), Tensor([1e200]))
        finally:
            tn.set_debug(False)


class TestBackward:
    def test_square(self):
        tape = GradTape()
        w = tape.watch("w", 3.0)
        assert backward(tape, tn.square(w))["w"] == pytest.approx(6.0)

    def test_unused_parameter_is_zero(self):
        tape = GradTape()
        w = tape.watch("w", [1.0, 2.0])
        tape.watch("unused", [[1.0, 2.0], [3.0, 4.0]])
        g = backward(tape, tn.sum_all(tn.square(w)))
        np.testing.assert_array_equal(g["unused"], np.zeros((2, 2)))

    def test_non_scalar_seed(self):
        tape = GradTape()
        w = tape.watch("w", [1.0, 2.0])
        with pytest.raises(ContractError):
            backward(tape, tn.square(w))

    def test_reuse_accumulates(self):
        tape = GradTape()
        w = tape.watch("w", [2.0])
        out = tn.sum_all(tn.mul(w, tn.add(w, w)))  # 2 w^2
        assert backward(tape, out)["w"][0] == pytest.approx(8.0)

    def test_additivity(self):
        rng = np.random.default_rng(3)
        params = {"w": rng.normal(size=(2, 2, 2)), "b": rng.normal(size=2)}
        x = Tensor(rng.normal(size=(2, 5)))

        def outputs(P):
            y = tn.tanh(tn.conv1d_causal_dilated(x, P["w"], P["b"], 2))
            return [tn.sum_all(tn.rows(y, 0, 1)), tn.sum_all(tn.square(tn.rows(y, 1, 2)))]

        tape = GradTape()
        P = {k: tape.watch(k, v) for k, v in params.items()}
        a, b = outputs(P)
        joint = backward(tape, tn.add(a, b))
        parts = []
        for i in range(2):
            tape = GradTape()
            P = {k: tape.watch(k, v) for k, v in params.items()}
            parts.append(backward(tape, outputs(P)[i]))
        for k in params:
            np.testing.assert_allclose(joint[k], parts[0][k] + parts[1][k], rtol=1e-12, atol=1e-14)


def _conv_gate_sum(x):
    def f(P):
        xf = tn.conv1d_causal_dilated(x, P["wf"], P["bf"], 2)
        xg = tn.conv1d_causal_dilated(x, P["wg"], P["bg"], 2)
        return tn.sum_all(tn.mul(tn.tanh(xf), tn.sigmoid(xg)))
    return f


class TestGradCheck:
    def test_quadratic(self):
        theta = np.random.default_rng(0).normal(size=(3, 4))

        def f(P):
            return tn.scale(tn.sum_all(tn.square(P["theta"])), 0.5)

        g = analytic_gradients(f, {"theta": theta})
        np.testing.assert_allclose(g["theta"], theta, rtol=1e-15)
        report = grad_check(f, {"theta": theta}, epsilon=1e-5, tolerance=1e-7)
        assert report.max_relative_error < 1e-7
        assert report.passed

    def test_conv_gated_sum(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 6)))
        params = {"wf": rng.normal(size=(3, 2, 2)), "bf": rng.normal(size=3),
                  "wg": rng.normal(size=(3, 2, 2)), "bg": rng.normal(size=3)}
        report = grad_check(_conv_gate_sum(x), params, epsilon=1e-5, tolerance=1e-6)
        assert report.passed, report

    def test_injected_error_detected(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 6)))
        params = {"wf": rng.normal(size=(3, 2, 2)), "bf": rng.normal(size=3),
                  "wg": rng.normal(size=(3, 2, 2)), "bg": rng.normal(size=3)}
        f = _conv_gate_sum(x)
        grads = analytic_gradients(f, params)
        grads["wf"] = grads["wf"].copy()
        grads["wf"][1, 0, 1] *= 1.10
        report = grad_check(f, params, analytic=grads)
        assert not report.passed
        assert report.worst_param == "wf" and report.worst_index == (1, 0, 1)

    def test_nondeterministic_function(self):
        calls = itertools.count()

        def f(P):
            return tn.scale(tn.sum_all(P["w"]), 1.0 + next(calls))

        with pytest.raises(NonDeterministicError):
            grad_check(f, {"w": np.ones(2)})

    def test_epsilon_range(self):
        with pytest.raises(ContractError):
            grad_check(lambda P: tn.sum_all(P["w"]), {"w": np.ones(2)}, epsilon=0.1)

    @pytest.mark.parametrize("op", ["tanh", "sigmoid", "square", "frame_diff", "column_norm_sum"])
    def test_elementwise_ops(self, op):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 4))

        def f(P):
            y = getattr(tn, op)(P["a"])
            return tn.sum_all(tn.mul(y, Tensor(np.cos(np.arange(y.data.size)).reshape(y.shape))))

        assert grad_check(f, {"a": a}, tolerance=1e-6).passed

    def test_structural_ops(self):
        rng = np.random.default_rng(12)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=2)

        def f(P):
            cols = [tn.concat([tn.column(P["a"], t), P["b"]]) for t in range(4)]
            s = tn.stack_columns(cols)
            return tn.sum_all(tn.square(tn.rows(tn.relu(tn.sub(s, Tensor(np.full((5, 4), 0.1)))), 1, 4)))

        assert grad_check(f, {"a": a, "b": b}, tolerance=1e-6).passed

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 6),
           st.integers(0, 2**31 - 1))
    def test_randomized_shapes(self, K, d, C, T, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(C, T)))
        params = {"wf": rng.normal(size=(2, C, K)), "bf": rng.normal(size=2),
                  "wg": rng.normal(size=(2, C, K)), "bg": rng.normal(size=2)}

        def f(P):
            xf = tn.conv1d_causal_dilated(x, P["wf"], P["bf"], d)
            xg = tn.conv1d_causal_dilated(x, P["wg"], P["bg"], d)
            return tn.sum_all(tn.square(tn.mul(tn.tanh(xf), tn.sigmoid(xg))))

        assert grad_check(f, params, tolerance=1e-4).passed


class TestLSTM:
    def _setup(self, T=4, D=3, H=2, seed=0):
        rng = np.random.default_rng(seed)
        return (rng.normal(size=(D, T)), rng.normal(size=(4 * H, D)) * 0.7,
                rng.normal(size=(4 * H, H)) * 0.7, rng.normal(size=4 * H),
                rng.normal(size=H), rng.normal(size=H))

    def test_unroll_matches_cells(self):
        x, wx, wh, b, h0, c0 = self._setup()
        fused = tn.lstm_unroll(Tensor(x), Tensor(wx), Tensor(wh), Tensor(b), Tensor(h0), Tensor(c0))
        h, c = Tensor(h0), Tensor(c0)
        for t in range(x.shape[1]):
            h, c = tn.lstm_cell(Tensor(x[:, t]), h, c, Tensor(wx), Tensor(wh), Tensor(b))
            np.testing.assert_allclose(fused.data[:, t], h.data, rtol=1e-13, atol=1e-15)

    def test_unroll_gradients(self):
        x, wx, wh, b, h0, c0 = self._setup(T=5, seed=4)
        params = dict(x=x, wx=wx, wh=wh, b=b, h0=h0, c0=c0)

        def f(P):
            hs = tn.lstm_unroll(P["x"], P["wx"], P["wh"], P["b"], P["h0"], P["c0"])
            return tn.sum_all(tn.mul(hs, Tensor(np.sin(np.arange(10.0)).reshape(2, 5))))

        report = grad_check(f, params, tolerance=1e-6)
        assert report.passed, report
