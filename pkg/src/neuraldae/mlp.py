"""Feed-forward networks used as unknown closures.

A network maps normalized inputs ``u = (x - mu_x) / sigma_x`` through hidden
layers ``a_l = act(W_l a_{l-1} + b_l)`` to an affine output layer ``o``; the
returned value is ``sigma_z * o + mu_z``.  All weights and biases live in one
flat vector ``theta`` laid out layer by layer as ``[W_1 (row-major), b_1,
W_2, b_2, ...]``.

Three evaluation routes are provided:

* :func:`forward` - plain numpy, batched over rows,
* :func:`emit_expressions` - scalar expression graph for the sparse AD engine,
* :class:`MlpBlock` - fused batched kernel returning values, Jacobians and
  the exact Hessian of a weighted sum of outputs, used when transcribing
  large problems.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import expr as E
from .errors import EmptySample, ShapeMismatch

__all__ = [
    "ACTIVATIONS",
    "MlpBlock",
    "MlpSpec",
    "Normalization",
    "compute_normalization",
    "emit_expressions",
    "export_weights",
    "forward",
    "init_params",
    "load_weights",
    "pretrain",
]

ACTIVATIONS = ("tanh", "softplus", "swish")
SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``(n_in, h_1, ..., h_L, n_out)`` and hidden activation."""

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeMismatch(f"invalid layer widths {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def n_params(self):
        return sum(o * i + o for i, o in zip(self.widths[:-1], self.widths[1:]))

    def layer_offsets(self):
        """``(w_offset, b_offset, n_out, n_in)`` for every layer."""
        out = []
        off = 0
        for i, o in zip(self.widths[:-1], self.widths[1:]):
            out.append((off, off + o * i, o, i))
            off += o * i + o
        return out

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {theta.shape}")
        return [
            (theta[w:b].reshape(o, i), theta[b : b + o]) for w, b, o, i in self.layer_offsets()
        ]


@dataclass
class Normalization:
    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_z: np.ndarray
    sigma_z: np.ndarray

    def __post_init__(self):
        for name in ("mu_x", "sigma_x", "mu_z", "sigma_z"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    @classmethod
    def identity(cls, n_in, n_out):
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    def check(self, spec):
        if self.mu_x.shape != (spec.n_in,) or self.sigma_x.shape != (spec.n_in,):
            raise ShapeMismatch("input normalization does not match the network input width")
        if self.mu_z.shape != (spec.n_out,) or self.sigma_z.shape != (spec.n_out,):
            raise ShapeMismatch("output normalization does not match the network output width")


def compute_normalization(X, Z):
    """Mean and population standard deviation of a sample, sigma floored at 1e-8."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    if X.shape[0] == 0 or Z.shape[0] == 0:
        raise EmptySample("normalization needs at least one sample")
    return Normalization(
        X.mean(axis=0),
        np.maximum(X.std(axis=0), SIGMA_FLOOR),
        Z.mean(axis=0),
        np.maximum(Z.std(axis=0), SIGMA_FLOOR),
    )


def init_params(spec, seed=0):
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for w, b, o, i in spec.layer_offsets():
        lim = np.sqrt(6.0 / (i + o))
        theta[w:b] = rng.uniform(-lim, lim, size=o * i)
    return theta


# activations and their first two derivatives --------------------------------


def _sigmoid(s):
    return expit(s)


def activate(name, s):
    if name == "tanh":
        return np.tanh(s)
    if name == "softplus":
        return np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
    return s * expit(s)


def _act_derivs(name, s):
    """Activation value with first and second derivatives."""
    if name == "tanh":
        a = np.tanh(s)
        d1 = 1.0 - a * a
        return a, d1, -2.0 * a * d1
    sg = _sigmoid(s)
    if name == "softplus":
        a = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
        return a, sg, sg * (1.0 - sg)
    a = s * sg
    q = sg * (1.0 - sg)
    return a, sg + s * q, 2.0 * q + s * q * (1.0 - 2.0 * sg)


def forward(spec, norm, theta, X):
    """Network outputs for each row of ``X``; shape ``(P, n_out)``."""
    norm.check(spec)
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != spec.n_in:
        raise ShapeMismatch(f"input width {X.shape[1]} != {spec.n_in}")
    a = (X - norm.mu_x) / norm.sigma_x
    layers = spec.unpack(theta)
    for W, b in layers[:-1]:
        a = activate(spec.activation, a @ W.T + b)
    W, b = layers[-1]
    z = (a @ W.T + b) * norm.sigma_z + norm.mu_z
    return z[0] if single else z


def emit_expressions(spec, norm, inputs, theta):
    """Build the network as scalar expressions.

    Parameters
    ----------
    inputs : sequence of Expr or float
        One entry per network input.
    theta : sequence of Expr or float
        Flat parameter vector in the layout of :class:`MlpSpec`.

    Returns
    -------
    list of Expr
    """
    norm.check(spec)
    if len(inputs) != spec.n_in:
        raise ShapeMismatch(f"{len(inputs)} inputs for a network with {spec.n_in}")
    if len(theta) != spec.n_params:
        raise ShapeMismatch(f"{len(theta)} parameters for a network with {spec.n_params}")
    act = {"tanh": E.tanh, "softplus": E.softplus, "swish": E.swish}[spec.activation]
    a = [(u - m) * (1.0 / s) for u, m, s in zip(inputs, norm.mu_x, norm.sigma_x)]
    offs = spec.layer_offsets()
    for li, (w, b, o, i) in enumerate(offs):
        s = []
        for r in range(o):
            terms = [theta[w + r * i + c] * a[c] for c in range(i)]
            terms.append(theta[b + r])
            s.append(_sum(terms))
        a = s if li == len(offs) - 1 else [act(v) for v in s]
    return [v * float(sz) + float(mz) for v, sz, mz in zip(a, norm.sigma_z, norm.mu_z)]


def _sum(terms):
    for t in terms:
        if isinstance(t, E.Expr):
            return t.graph.add(terms)
    return float(sum(terms))


# fused kernel ----------------------------------------------------------------


class MlpBlock:
    """Batched values and exact derivatives of a network.

    The derivative routines treat both the inputs and the parameters as
    variables.  Hessians come from a forward-over-reverse sweep written in
    terms of dense layer operations.

    Parameters
    ----------
    spec : MlpSpec
    norm : Normalization
    chunk : int
        Number of points processed together in :meth:`hessian`.
    """

    def __init__(self, spec, norm, chunk=16):
        norm.check(spec)
        self.spec = spec
        self.norm = norm
        self.chunk = int(chunk)

    def _forward(self, X, layers):
        a = (X - self.norm.mu_x) / self.norm.sigma_x
        acts = [a]
        pre = []
        for W, b in layers[:-1]:
            s = a @ W.T + b
            a, d1, d2 = _act_derivs(self.spec.activation, s)
            pre.append((d1, d2))
            acts.append(a)
        return acts, pre

    def value(self, X, theta):
        return forward(self.spec, self.norm, theta, X)

    def value_and_jacobian(self, X, theta):
        """Outputs and their Jacobians.

        Returns
        -------
        Z : ndarray, shape (P, n_out)
        Jx : ndarray, shape (P, n_out, n_in)
        Jt : ndarray, shape (P, n_out, n_params)
        """
        spec = self.spec
        X = np.asarray(X, dtype=float)
        layers = spec.unpack(theta)
        acts, pre = self._forward(X, layers)
        W, b = layers[-1]
        Z = (acts[-1] @ W.T + b) * self.norm.sigma_z + self.norm.mu_z
        P = X.shape[0]
        offs = spec.layer_offsets()
        Jx = np.empty((P, spec.n_out, spec.n_in))
        Jt = np.zeros((P, spec.n_out, spec.n_params))
        for o in range(spec.n_out):
            g = np.zeros((P, spec.n_out))
            g[:, o] = self.norm.sigma_z[o]
            for li in range(spec.n_layers - 1, -1, -1):
                w0, b0, no, ni = offs[li]
                Wl = layers[li][0]
                Jt[:, o, w0:b0] = (g[:, :, None] * acts[li][:, None, :]).reshape(P, -1)
                Jt[:, o, b0 : b0 + no] = g
                ga = g @ Wl
                if li > 0:
                    g = ga * pre[li - 1][0]
            Jx[:, o, :] = ga / self.norm.sigma_x
        return Z, Jx, Jt

    def hessian(self, X, theta, rho):
        """Exact Hessian of ``sum_p sum_o rho[p, o] * z_o(x_p; theta)``.

        Returns
        -------
        Hxx : ndarray, shape (P, n_in, n_in)
            Per-point input-input block.
        Hxt : ndarray, shape (P, n_in, n_params)
            Per-point input-parameter block.
        Htt : ndarray, shape (n_params, n_params)
            Parameter block summed over points.
        """
        spec = self.spec
        X = np.asarray(X, dtype=float)
        rho = np.asarray(rho, dtype=float)
        P = X.shape[0]
        n_in, n_th = spec.n_in, spec.n_params
        Hxx = np.empty((P, n_in, n_in))
        Hxt = np.empty((P, n_in, n_th))
        Htt = np.zeros((n_th, n_th))
        layers = spec.unpack(theta)
        for start in range(0, P, self.chunk):
            sl = slice(start, min(P, start + self.chunk))
            hx = self._hessian_chunk(X[sl], layers, rho[sl], Htt)
            Hxx[sl] = hx[:, :n_in, :]
            Hxt[sl] = np.swapaxes(hx[:, n_in:, :], 1, 2)
        return Hxx, Hxt, Htt

    def _hessian_chunk(self, X, layers, rho, Htt):
        spec = self.spec
        n_in = spec.n_in
        D = n_in + spec.n_params
        P = X.shape[0]
        offs = spec.layer_offsets()
        L = spec.n_layers
        acts, pre = self._forward(X, layers)

        # forward tangents of the activations (index 0 is the normalized input)
        adot = [np.zeros((P, D, n_in))]
        idx = np.arange(n_in)
        adot[0][:, idx, idx] = 1.0 / self.norm.sigma_x
        sdot = []
        for li in range(L - 1):
            w0, b0, no, ni = offs[li]
            Wl = layers[li][0]
            s_t = adot[li] @ Wl.T
            self._seed_weights(s_t, w0, b0, no, ni, acts[li], n_in)
            sdot.append(s_t)
            adot.append(s_t * pre[li][0][:, None, :])

        # reverse sweep with adjoint tangents
        g_out = rho * self.norm.sigma_z
        w0, b0, no, ni = offs[L - 1]
        WL = layers[L - 1][0]
        ga = g_out @ WL
        ga_t = np.zeros((P, D, ni))
        # W_L directions: d(ga)_j = g_out_i for direction (i, j)
        dirs = n_in + w0 + np.arange(no * ni)
        ga_t[:, dirs, np.tile(np.arange(ni), no)] += np.repeat(g_out, ni, axis=1)
        # Hessian columns of W_L entries: g_out_i * adot_{L-1, j}
        self._acc_theta(Htt, n_in, w0, b0, no, ni, None, g_out, acts[L - 1], adot[L - 1])

        for li in range(L - 2, -1, -1):
            w0, b0, no, ni = offs[li]
            Wl = layers[li][0]
            d1, d2 = pre[li]
            gs = ga * d1
            gs_t = ga_t * d1[:, None, :] + sdot[li] * (d2 * ga)[:, None, :]
            self._acc_theta(Htt, n_in, w0, b0, no, ni, gs_t, gs, acts[li], adot[li])
            ga_new = gs @ Wl
            ga_t_new = gs_t @ Wl
            dirs = n_in + w0 + np.arange(no * ni)
            ga_t_new[:, dirs, np.tile(np.arange(ni), no)] += np.repeat(gs, ni, axis=1)
            ga, ga_t = ga_new, ga_t_new
        return ga_t / self.norm.sigma_x

    @staticmethod
    def _seed_weights(s_t, w0, b0, no, ni, a_prev, n_in):
        dirs = n_in + w0 + np.arange(no * ni)
        rows = np.repeat(np.arange(no), ni)
        s_t[:, dirs, rows] += np.tile(a_prev, (1, no))
        s_t[:, n_in + b0 + np.arange(no), np.arange(no)] += 1.0

    @staticmethod
    def _acc_theta(Htt, n_in, w0, b0, no, ni, gs_t, gs, a_prev, a_prev_t):
        """Add the tangents of the layer's weight and bias gradients to ``Htt``."""
        # gradient wrt W[i, j] is gs_i * a_prev_j; wrt b[i] is gs_i
        blk = np.einsum("pi,pdj->dij", gs, a_prev_t[:, n_in:, :])
        if gs_t is not None:
            blk += np.einsum("pdi,pj->dij", gs_t[:, n_in:, :], a_prev)
            Htt[:, b0 : b0 + no] += gs_t[:, n_in:, :].sum(axis=0)
        Htt[:, w0:b0] += blk.reshape(blk.shape[0], -1)


# pretraining -----------------------------------------------------------------


def pretrain(spec, norm, theta0, X, Z, n_steps, lr=1e-2):
    """Full-batch gradient descent on the network fit to ``(X, Z)``.

    The descent step uses the mean squared error of normalized outputs,
    which leaves the minimizer of the raw sum of squares unchanged while
    making the step size independent of the output scale and sample count.

    Returns
    -------
    theta : ndarray
    history : ndarray
        Raw sum of squared errors before each step and after the last one.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(X.shape[0], -1)
    theta = np.array(theta0, dtype=float, copy=True)
    history = np.empty(n_steps + 1)
    block = MlpBlock(spec, norm)
    n = X.shape[0] * spec.n_out
    for k in range(n_steps + 1):
        pred, grad = _fit_loss_grad(block, theta, X, Z)
        history[k] = pred
        if k == n_steps:
            break
        theta -= lr * grad / n
    return theta, history


def _fit_loss_grad(block, theta, X, Z):
    spec = block.spec
    layers = spec.unpack(theta)
    acts, pre = block._forward(X, layers)
    W, b = layers[-1]
    o = acts[-1] @ W.T + b
    target = (Z - block.norm.mu_z) / block.norm.sigma_z
    r = o - target
    loss = float(np.sum((r * block.norm.sigma_z) ** 2))
    grad = np.empty(spec.n_params)
    g = 2.0 * r
    offs = spec.layer_offsets()
    for li in range(spec.n_layers - 1, -1, -1):
        w0, b0, no, ni = offs[li]
        grad[w0:b0] = (g.T @ acts[li]).ravel()
        grad[b0 : b0 + no] = g.sum(axis=0)
        if li > 0:
            g = (g @ layers[li][0]) * pre[li - 1][0]
    return loss, grad


def fit_loss_gradient(spec, norm, theta, X, Z):
    """Normalized-output squared error of the pretraining fit and its gradient."""
    block = MlpBlock(spec, norm)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(X.shape[0], -1)
    layers = spec.unpack(theta)
    acts, _ = block._forward(X, layers)
    W, b = layers[-1]
    r = acts[-1] @ W.T + b - (Z - norm.mu_z) / norm.sigma_z
    return float(np.sum(r * r)), _fit_loss_grad(block, theta, X, Z)[1]


# weight export -------------------------------------------------------------------


def export_weights(spec, norm, theta):
    """JSON-serializable description of a trained network."""
    layers = spec.unpack(theta)
    return {
        "layer_widths": list(spec.widths),
        "activation": spec.activation,
        "normalization": {
            "mu_x": norm.mu_x.tolist(),
            "sigma_x": norm.sigma_x.tolist(),
            "mu_z": norm.mu_z.tolist(),
            "sigma_z": norm.sigma_z.tolist(),
        },
        "weights": [W.tolist() for W, _ in layers],
        "biases": [b.tolist() for _, b in layers],
    }


def load_weights(data):
    """Inverse of :func:`export_weights`; returns ``(spec, norm, theta)``."""
    if isinstance(data, str):
        data = json.loads(data)
    spec = MlpSpec(tuple(data["layer_widths"]), data["activation"])
    n = data["normalization"]
    norm = Normalization(n["mu_x"], n["sigma_x"], n["mu_z"], n["sigma_z"])
    parts = []
    for W, b in zip(data["weights"], data["biases"]):
        parts.append(np.asarray(W, dtype=float).ravel())
        parts.append(np.asarray(b, dtype=float))
    theta = np.concatenate(parts)
    spec.unpack(theta)
    return spec, norm, theta
