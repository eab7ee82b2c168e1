import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuraldae import expr as E
from neuraldae.errors import EmptySample, ShapeMismatch
from neuraldae.mlp import (
    MlpBlock,
    MlpSpec,
    Normalization,
    activate,
    compute_normalization,
    emit_expressions,
    export_weights,
    fit_loss_gradient,
    forward,
    init_params,
    load_weights,
    pretrain,
)

from conftest import dense_lower


def expr_network(spec, norm, n_points=1):
    """Network over variables ``[x (n_in), theta]`` as an expression function."""
    g = E.Graph(spec.n_in + spec.n_params)
    v = g.vars()
    return E.ExprFunction(emit_expressions(spec, norm, v[: spec.n_in], v[spec.n_in :]))


class TestSpec:
    @pytest.mark.parametrize("widths, n", [((4, 20, 20, 2), 4 * 20 + 20 + 20 * 20 + 20 + 20 * 2 + 2), ((1, 1), 2)])
    def test_parameter_count(self, widths, n):
        assert MlpSpec(widths).n_params == n

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            MlpSpec((2, 3, 1), "relu")

    def test_bad_widths(self):
        with pytest.raises(ShapeMismatch):
            MlpSpec((2,))

    def test_layout_is_a_bijection(self):
        spec = MlpSpec((3, 5, 4, 2))
        theta = np.arange(spec.n_params, dtype=float)
        seen = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in spec.unpack(theta)])
        np.testing.assert_array_equal(np.sort(seen), theta)
        W1, b1 = spec.unpack(theta)[0]
        assert W1[1, 0] == 3.0 and b1[0] == 15.0

    def test_unpack_wrong_length(self):
        with pytest.raises(ShapeMismatch):
            MlpSpec((2, 2)).unpack(np.zeros(5))


class TestActivations:
    def test_zero_values(self):
        assert activate("tanh", 0.0) == 0.0
        assert activate("softplus", 0.0) == pytest.approx(math.log(2.0), abs=1e-16)
        assert activate("swish", 0.0) == 0.0

    @pytest.mark.parametrize("s", [-30.0, -2.0, 0.0, 0.7, 25.0])
    def test_swish_identity(self, s):
        assert activate("swish", s) == pytest.approx(s / (1.0 + math.exp(-s)), rel=1e-14, abs=1e-300)

    def test_softplus_no_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            v = activate("softplus", np.array([1000.0, -1000.0]))
        np.testing.assert_allclose(v, [1000.0, 0.0], atol=1e-300)


class TestNormalization:
    def test_population_std(self):
        n = compute_normalization([[0.0], [2.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(n.mu_x, [1.0])
        np.testing.assert_array_equal(n.sigma_x, [1.0])
        np.testing.assert_array_equal(n.sigma_z, [1e-8])

    def test_empty(self):
        with pytest.raises(EmptySample):
            compute_normalization(np.zeros((0, 2)), np.zeros((0, 1)))

    def test_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            forward(MlpSpec((2, 1)), Normalization.identity(3, 1), np.zeros(3), np.zeros((1, 2)))


class TestForward:
    def test_hand_computed(self):
        spec = MlpSpec((1, 1, 1), "tanh")
        theta = np.array([2.0, 0.5, 3.0, -1.0])
        norm = Normalization([1.0], [2.0], [0.5], [4.0])
        z = forward(spec, norm, theta, np.array([[3.0]]))
        expected = 4.0 * (3.0 * math.tanh(2.0 * 1.0 + 0.5) - 1.0) + 0.5
        assert z[0, 0] == pytest.approx(expected, abs=1e-14)

    def test_single_row(self):
        spec = MlpSpec((2, 3, 1))
        theta = init_params(spec, 1)
        norm = Normalization.identity(2, 1)
        np.testing.assert_array_equal(forward(spec, norm, theta, [0.2, 0.3]), forward(spec, norm, theta, [[0.2, 0.3]])[0])

    def test_glorot_bounds_and_zero_biases(self):
        spec = MlpSpec((4, 20, 2))
        theta = init_params(spec, 0)
        (W1, b1), (W2, b2) = spec.unpack(theta)
        assert np.all(np.abs(W1) <= math.sqrt(6 / 24)) and np.all(np.abs(W2) <= math.sqrt(6 / 22))
        assert not b1.any() and not b2.any()
        np.testing.assert_array_equal(theta, init_params(spec, 0))


class TestRoutesAgree:
    """numpy, expression graph and fused kernel give the same network."""

    def test_emit_matches_forward(self, activation, rng):
        spec = MlpSpec((3, 6, 5, 2), activation)
        norm = Normalization(rng.normal(size=3), rng.uniform(0.5, 2, 3), rng.normal(size=2), rng.uniform(0.5, 2, 2))
        theta = init_params(spec, 7)
        f = expr_network(spec, norm)
        for x in rng.normal(size=(5, 3)):
            np.testing.assert_allclose(f.eval(np.concatenate([x, theta])), forward(spec, norm, theta, x), rtol=0, atol=1e-14)

    def test_block_jacobian(self, activation, rng):
        spec = MlpSpec((2, 4, 3, 2), activation)
        norm = Normalization([0.1, -0.3], [1.5, 0.8], [0.2, -1.0], [3.0, 0.5])
        theta = init_params(spec, 2) + 0.1 * rng.normal(size=spec.n_params)
        f = expr_network(spec, norm)
        X = rng.normal(size=(4, 2))
        Z, Jx, Jt = MlpBlock(spec, norm).value_and_jacobian(X, theta)
        for p, x in enumerate(X):
            J = f.jacobian(np.concatenate([x, theta])).toarray()
            np.testing.assert_allclose(Z[p], f.eval(np.concatenate([x, theta])), atol=1e-13)
            np.testing.assert_allclose(Jx[p], J[:, :2], atol=1e-12)
            np.testing.assert_allclose(Jt[p], J[:, 2:], atol=1e-12)

    def test_block_hessian(self, activation, rng):
        spec = MlpSpec((2, 4, 3, 2), activation)
        norm = Normalization([0.1, -0.3], [1.5, 0.8], [0.2, -1.0], [3.0, 0.5])
        theta = init_params(spec, 2) + 0.1 * rng.normal(size=spec.n_params)
        f = expr_network(spec, norm)
        X = rng.normal(size=(3, 2))
        rho = rng.normal(size=(3, 2))
        Hxx, Hxt, Htt = MlpBlock(spec, norm, chunk=2).hessian(X, theta, rho)
        n = f.n_vars
        Htt_ref = np.zeros((spec.n_params, spec.n_params))
        for p, x in enumerate(X):
            H = dense_lower(f.hessian(np.concatenate([x, theta]), rho[p]), n)
            np.testing.assert_allclose(Hxx[p], H[:2, :2], atol=1e-11)
            np.testing.assert_allclose(Hxt[p], H[:2, 2:], atol=1e-11)
            Htt_ref += H[2:, 2:]
        np.testing.assert_allclose(Htt, Htt_ref, atol=1e-11)


class TestPretrain:
    def _data(self):
        X = np.linspace(-1, 1, 40)[:, None]
        Z = np.sin(2 * X)
        return X, Z

    def test_history_decreases(self):
        spec = MlpSpec((1, 8, 1))
        X, Z = self._data()
        norm = compute_normalization(X, Z)
        theta, hist = pretrain(spec, norm, init_params(spec, 0), X, Z, 500, lr=0.05)
        assert hist.shape == (501,)
        assert hist[-1] < 0.1 * hist[0]
        assert np.all(np.diff(hist[-50:]) <= 1e-12)

    def test_history_is_raw_sse(self):
        spec = MlpSpec((1, 4, 1))
        X, Z = self._data()
        norm = compute_normalization(X, 10 * Z)
        theta0 = init_params(spec, 3)
        _, hist = pretrain(spec, norm, theta0, X, 10 * Z, 0)
        assert hist[0] == pytest.approx(np.sum((forward(spec, norm, theta0, X) - 10 * Z) ** 2), rel=1e-13)

    def test_zero_steps_is_identity(self):
        spec = MlpSpec((1, 4, 1))
        X, Z = self._data()
        theta0 = init_params(spec, 3)
        theta, _ = pretrain(spec, compute_normalization(X, Z), theta0, X, Z, 0)
        np.testing.assert_array_equal(theta, theta0)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_fit_gradient_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        spec = MlpSpec((2, 3, 2), "softplus")
        X = rng.normal(size=(6, 2))
        Z = rng.normal(size=(6, 2))
        norm = compute_normalization(X, Z)
        theta = init_params(spec, seed)
        _, g = fit_loss_gradient(spec, norm, theta, X, Z)
        h = 1e-6
        fd = np.array(
            [
                (fit_loss_gradient(spec, norm, theta + h * e, X, Z)[0] - fit_loss_gradient(spec, norm, theta - h * e, X, Z)[0])
                / (2 * h)
                for e in np.eye(spec.n_params)
            ]
        )
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)


class TestExport:
    def test_round_trip(self, rng):
        spec = MlpSpec((4, 20, 20, 2), "swish")
        norm = Normalization(rng.normal(size=4), rng.uniform(1, 2, 4), rng.normal(size=2), rng.uniform(1, 2, 2))
        theta = rng.normal(size=spec.n_params)
        text = json.dumps(export_weights(spec, norm, theta))
        spec2, norm2, theta2 = load_weights(text)
        assert spec2 == spec
        np.testing.assert_array_equal(theta2, theta)
        X = rng.normal(size=(10, 4))
        np.testing.assert_array_equal(forward(spec2, norm2, theta2, X), forward(spec, norm, theta, X))

    def test_layer_shapes(self):
        spec = MlpSpec((4, 20, 2))
        d = export_weights(spec, Normalization.identity(4, 2), init_params(spec))
        assert [np.shape(W) for W in d["weights"]] == [(20, 4), (2, 20)]
        assert [len(b) for b in d["biases"]] == [20, 2]

    def test_corrupt_weights(self):
        spec = MlpSpec((2, 2))
        d = export_weights(spec, Normalization.identity(2, 2), init_params(spec))
        d["biases"][0] = [0.0]
        with pytest.raises(ShapeMismatch):
            load_weights(d)
