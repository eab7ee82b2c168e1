import numpy as np
import pytest

from neuraldae import expr as E
from neuraldae.mlp import ACTIVATIONS, MlpSpec, Normalization, emit_expressions
from neuraldae.ocp import ModelBuilder, State


def random_function(rng, n_vars=4, n_out=2, depth=4, activation=None):
    """Random expression graph over ``n_vars`` inputs, safe on ``[-1, 1]^n``.

    Every operator appears with arguments kept inside its domain.  With
    ``activation`` the last output is a small embedded network with
    variable weights.
    """
    g = E.Graph(n_vars)
    xs = g.vars()

    def build(d):
        if d == 0 or rng.random() < 0.15:
            if rng.random() < 0.8:
                return xs[rng.integers(n_vars)]
            return g.const(rng.uniform(-2, 2))
        k = rng.integers(12)
        a = build(d - 1)
        if k == 0:
            return a + build(d - 1)
        if k == 1:
            return a * build(d - 1)
        if k == 2:
            return a / (2.0 + E.tanh(build(d - 1)))
        if k == 3:
            return a ** int(rng.integers(2, 4))
        if k == 4:
            return (1.5 + E.tanh(a)) ** -1
        if k == 5:
            return -a
        if k == 6:
            return E.exp(E.tanh(a))
        if k == 7:
            return E.log(2.0 + E.tanh(a))
        if k == 8:
            return E.sqrt(1.0 + a * a)
        if k == 9:
            return E.tanh(a)
        if k == 10:
            return E.softplus(E.tanh(a))
        return E.swish(a) - 0.5 * a

    outs = [build(depth) for _ in range(n_out)]
    if activation is not None:
        spec = MlpSpec((2, 3, 1), activation)
        # weights are the variables themselves, inputs two subexpressions
        theta = [xs[i % n_vars] * float(rng.uniform(0.5, 1.5)) for i in range(spec.n_params)]
        norm = Normalization([0.1, -0.2], [1.3, 0.7], [0.3], [2.0])
        outs.append(emit_expressions(spec, norm, [build(2), build(2)], theta)[0])
    return E.ExprFunction(outs)


def fd_jacobian(f, w, h=1e-6):
    J = np.zeros((f.n_out, f.n_vars))
    for j in range(f.n_vars):
        e = np.zeros(f.n_vars)
        e[j] = h
        J[:, j] = (f.eval(w + e) - f.eval(w - e)) / (2 * h)
    return J


def fd_hessian(f, w, weights, h=1e-5):
    """Central differences of the analytic weighted gradient."""

    def grad(v):
        return np.asarray(weights) @ f.jacobian(v).toarray()

    H = np.zeros((f.n_vars, f.n_vars))
    for j in range(f.n_vars):
        e = np.zeros(f.n_vars)
        e[j] = h
        H[:, j] = (grad(w + e) - grad(w - e)) / (2 * h)
    return H


def dense_lower(coo, n):
    A = np.zeros((n, n))
    np.add.at(A, (coo.row, coo.col), coo.data)
    return A + np.tril(A, -1).T


def decay_model(x0s=(1.0,), horizon=(0.0, 1.0), rate=1.0):
    """``dx/dt = -rate x``."""
    b = ModelBuilder([State("x", tuple(x0s))])
    return b.build([-rate * b["x"]], horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=ACTIVATIONS)
def activation(request):
    return request.param
