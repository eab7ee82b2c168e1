"""Orthogonal collocation on finite elements with Radau points.

On every element ``[t_{i-1}, t_i]`` of length ``h_i`` the states are
Lagrange polynomials of degree ``K`` through the normalized nodes
``tau_0 = 0 < tau_1 < ... < tau_K = 1``; algebraic and closure variables are
polynomials of degree ``K - 1`` through ``tau_1 .. tau_K``.

:func:`transcribe` turns a :class:`~neuraldae.ocp.ContinuousModel` plus
observations into a sparse NLP: collocation rows, algebraic rows, closure
rows (network, known closure, or none), element continuity rows, initial
condition rows and path inequalities, with a least-squares objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicatePoints,
    MissingNetwork,
    ObservationOutsideElements,
    OutOfHorizon,
    UnsupportedOrder,
)
from .mlp import MlpBlock

__all__ = [
    "CollocationScheme",
    "NetworkSlot",
    "Transcription",
    "basis_derivative_matrix",
    "differentiation_matrix",
    "lagrange_basis",
    "radau_points",
    "radau_points_eig",
    "transcribe",
]

MAX_ORDER = 5

# Radau IIA abscissae on (0, 1]; checked against radau_points_eig in the tests.
_RADAU = {
    1: (1.0,),
    2: (1.0 / 3.0, 1.0),
    3: (0.15505102572168219018, 0.64494897427831780982, 1.0),
    4: (0.088587959512703947396, 0.40946686444073471086, 0.78765946176084705603, 1.0),
    5: (
        0.057104196114517682193,
        0.27684301363812382768,
        0.58359043236891682006,
        0.86024013565621944785,
        1.0,
    ),
}


def _check_order(K):
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= MAX_ORDER:
        raise UnsupportedOrder(f"collocation order must be an integer in [1, {MAX_ORDER}], got {K!r}")
    return int(K)


def radau_points(K):
    """Radau IIA points ``tau_1 < ... < tau_K = 1`` on ``(0, 1]``."""
    return np.array(_RADAU[_check_order(K)])


def radau_points_eig(K):
    """Radau points from eigenvalues of a companion matrix.

    The interior points are the roots of ``P_K(s) - P_{K-1}(s)`` mapped from
    ``[-1, 1]`` to ``[0, 1]``, where ``P_n`` are Legendre polynomials; the
    right end point is appended.
    """
    K = _check_order(K)
    from numpy.polynomial import legendre as L

    c = np.zeros(K + 1)
    c[K] = 1.0
    c[K - 1] = -1.0
    # roots of P_K - P_{K-1} on [-1, 1] include s = 1; drop it after mapping
    comp = L.legcompanion(c)
    s = np.sort(np.linalg.eigvals(comp).real)
    tau = (s + 1.0) / 2.0
    tau = tau[np.abs(tau - 1.0) > 1e-8]
    return np.append(np.sort(tau), 1.0)


def _bary_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(np.abs(diff) < 1e-14):
        raise DuplicatePoints("interpolation nodes must be distinct")
    return 1.0 / np.prod(diff, axis=1)


def differentiation_matrix(nodes):
    """``Dm[k, j] = l_j'(nodes[k])`` for the Lagrange basis on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    w = _bary_weights(nodes)
    n = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    Dm = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(Dm, 0.0)
    Dm[np.arange(n), np.arange(n)] = -Dm.sum(axis=1)
    return Dm


def basis_derivative_matrix(nodes):
    """``D[j, k] = l_j'(nodes[k])`` for ``j = 0..K`` and ``k = 1..K``."""
    return differentiation_matrix(nodes)[1:, :].T.copy()


def lagrange_basis(nodes, tau):
    """Basis values ``B[q, j] = l_j(tau[q])`` by the barycentric formula."""
    nodes = np.asarray(nodes, dtype=float)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    w = _bary_weights(nodes)
    diff = tau[:, None] - nodes[None, :]
    exact = np.abs(diff) < 1e-15
    rows = np.any(exact, axis=1)
    B = exact.astype(float)
    free = ~rows
    Bf = w[None, :] / diff[free]
    B[free] = Bf / Bf.sum(axis=1, keepdims=True)
    return B


@lru_cache(maxsize=None)
def _tables(K):
    tau = np.concatenate([[0.0], radau_points(K)])
    D = basis_derivative_matrix(tau)
    end = lagrange_basis(tau, [1.0])[0]
    Dbar = differentiation_matrix(tau[1:]) if K > 1 else np.zeros((1, 1))
    for a in (tau, D, end, Dbar):
        a.setflags(write=False)
    return tau, D, end, Dbar


class CollocationScheme:
    """Uniform finite elements with ``K`` Radau points each.

    Parameters
    ----------
    n_fe : int
        Number of elements.
    K : int
        Collocation points per element.
    horizon : tuple of float
        ``(t0, tf)``.
    """

    def __init__(self, n_fe, K, horizon):
        self.K = _check_order(K)
        self.n_fe = int(n_fe)
        if self.n_fe < 1:
            raise UnsupportedOrder("at least one element is required")
        t0, tf = (float(v) for v in horizon)
        if not tf > t0:
            raise OutOfHorizon("empty horizon")
        self.t0, self.tf = t0, tf
        self.boundaries = np.linspace(t0, tf, self.n_fe + 1)
        self.h = np.diff(self.boundaries)
        self.tau, self.D, self.end_weights, self.Dbar = _tables(self.K)

    @property
    def horizon(self):
        return (self.t0, self.tf)

    def point_times(self):
        """Times of the collocation points, shape ``(n_fe, K)``."""
        return self.boundaries[:-1, None] + self.h[:, None] * self.tau[None, 1:]

    def node_times(self):
        """Times of all nodes including each element's left end, ``(n_fe, K+1)``."""
        return self.boundaries[:-1, None] + self.h[:, None] * self.tau[None, :]

    def locate(self, t):
        """Element index and local coordinate; boundaries go to the left element."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        span = self.tf - self.t0
        tol = 1e-12 * max(1.0, span)
        if np.any(t < self.t0 - tol) or np.any(t > self.tf + tol):
            raise OutOfHorizon("time outside the discretized horizon")
        i = np.searchsorted(self.boundaries, t - tol, side="left") - 1
        i = np.clip(i, 0, self.n_fe - 1)
        tau = np.clip((t - self.boundaries[i]) / self.h[i], 0.0, 1.0)
        return i, tau


@dataclass
class NetworkSlot:
    """A network producing closure outputs ``outputs`` from model symbols."""

    spec: object
    norm: object
    outputs: tuple
    theta_offset: int = 0


class _Block:
    """A template evaluated at many points, contributing to constraint rows."""

    def __init__(self, fn, gidx, const, rows, scale, n):
        self.fn = fn
        self.gidx = gidx  # (P, n_loc), -1 marks a constant input
        self.const = const
        self.rows = rows  # (P, n_out), -1 drops the output
        self.scale = scale
        self.var_mask = gidx >= 0
        # Jacobian entries
        jr = rows[:, fn.jac_rows]
        jc = gidx[:, fn.jac_cols]
        self.jsel = ((jr >= 0) & (jc >= 0)).ravel()
        self.jrows = jr.ravel()[self.jsel]
        self.jcols = jc.ravel()[self.jsel]
        self.jscale = scale[:, fn.jac_rows].ravel()[self.jsel]
        # Hessian entries (lower triangle in global numbering)
        hi = gidx[:, fn.hess_rows]
        hj = gidx[:, fn.hess_cols]
        self.hsel = ((hi >= 0) & (hj >= 0)).ravel()
        a = hi.ravel()[self.hsel]
        b = hj.ravel()[self.hsel]
        self.hrows = np.maximum(a, b)
        self.hcols = np.minimum(a, b)
        self.row_valid = rows >= 0
        self.row_flat = rows[self.row_valid]

    def local(self, w):
        X = self.const.copy()
        X[self.var_mask] = w[self.gidx[self.var_mask]]
        return X

    def add_values(self, w, c):
        vals = self.fn.eval_batch(self.local(w)) * self.scale
        c += np.bincount(self.row_flat, vals[self.row_valid], minlength=c.size)

    def jac_values(self, w):
        return self.fn.jac_batch(self.local(w)).ravel()[self.jsel] * self.jscale

    def hess_values(self, w, lam):
        wt = np.where(self.row_valid, lam[np.maximum(self.rows, 0)], 0.0) * self.scale
        return self.fn.hess_batch(self.local(w), wt).ravel()[self.hsel]


class _NetBlock:
    """Network rows ``z - NN(inputs; theta) = 0`` at many points."""

    def __init__(self, slot, in_idx, rows, theta_idx, theta_fixed):
        self.slot = slot
        self.block = MlpBlock(slot.spec, slot.norm)
        self.in_idx = in_idx  # (P, n_in) global indices of network inputs
        self.rows = rows  # (P, n_out)
        self.theta_idx = theta_idx  # global indices of the parameters or None
        self.theta_fixed = theta_fixed
        P, n_in = in_idx.shape
        n_out = rows.shape[1]
        n_th = slot.spec.n_params
        r = np.repeat(rows[:, :, None], n_in, axis=2)
        c = np.repeat(in_idx[:, None, :], n_out, axis=1)
        jr = [r.ravel()]
        jc = [c.ravel()]
        if theta_idx is not None:
            jr.append(np.repeat(rows[:, :, None], n_th, axis=2).ravel())
            jc.append(np.broadcast_to(theta_idx, (P, n_out, n_th)).ravel())
        self.jrows = np.concatenate(jr)
        self.jcols = np.concatenate(jc)
        # Hessian pattern: per point input block, input-theta block, theta-theta block
        ii, jj = np.tril_indices(n_in)
        a = in_idx[:, ii]
        b = in_idx[:, jj]
        hr = [np.maximum(a, b).ravel()]
        hc = [np.minimum(a, b).ravel()]
        self._xx = (ii, jj)
        if theta_idx is not None:
            th = np.broadcast_to(theta_idx, (P, n_in, n_th))
            xi = np.repeat(in_idx[:, :, None], n_th, axis=2)
            hr.append(np.maximum(th, xi).ravel())
            hc.append(np.minimum(th, xi).ravel())
            ti, tj = np.tril_indices(n_th)
            hr.append(theta_idx[ti])
            hc.append(theta_idx[tj])
            self._tt = (ti, tj)
        self.hrows = np.concatenate(hr)
        self.hcols = np.concatenate(hc)

    def theta(self, w):
        if self.theta_idx is None:
            return self.theta_fixed
        return w[self.theta_idx]

    def inputs(self, w):
        return w[self.in_idx]

    def add_values(self, w, c):
        Z = self.block.value(self.inputs(w), self.theta(w))
        c[self.rows.ravel()] -= Z.ravel()

    def jac_values(self, w):
        _, Jx, Jt = self.block.value_and_jacobian(self.inputs(w), self.theta(w))
        parts = [-Jx.ravel()]
        if self.theta_idx is not None:
            parts.append(-Jt.ravel())
        return np.concatenate(parts)

    def hess_values(self, w, lam):
        rho = -lam[self.rows]
        Hxx, Hxt, Htt = self.block.hessian(self.inputs(w), self.theta(w), rho)
        ii, jj = self._xx
        parts = [Hxx[:, ii, jj].ravel()]
        if self.theta_idx is not None:
            parts.append(Hxt.ravel())
            ti, tj = self._tt
            parts.append(Htt[ti, tj])
        return np.concatenate(parts)


class Transcription:
    """Sparse NLP obtained by collocation; implements the solver interface.

    Use :func:`transcribe` to build one.

    Attributes
    ----------
    n, m : int
        Variable and constraint counts.
    x_lower, x_upper : ndarray
        Variable bounds.
    c_lower, c_upper : ndarray
        Constraint bounds (equal to zero for equalities).
    row_blocks : dict
        Row slices by kind: ``collocation``, ``algebraic``, ``closure``,
        ``continuity``, ``initial`` and ``path``.
    dense_vars, dense_rows : ndarray
        Network parameters and network rows, handed to the linear solver
        as ordering hints.
    """

    # construction --------------------------------------------------------------
    def __init__(self, model, scheme, obs, loss, mode, networks, theta_fixed, p_guess=None):
        self.model = model
        self.scheme = scheme
        self.obs = obs
        self.loss = loss
        self.mode = mode
        self.networks = list(networks or [])
        nfe, K = scheme.n_fe, scheme.K
        R = model.n_traj
        nx, ny, nz = model.n_x, model.n_y, model.n_z
        self.n_traj = R

        # variable layout ------------------------------------------------------
        off = 0
        self.xi = np.arange(R * nfe * (K + 1) * nx).reshape(R, nfe, K + 1, nx) + off
        off += self.xi.size
        self.yi = np.arange(R * nfe * K * ny).reshape(R, nfe, K, ny) + off
        off += self.yi.size
        self.zi = np.arange(R * nfe * K * nz).reshape(R, nfe, K, nz) + off
        off += self.zi.size
        free_p = [i for i, p in enumerate(model.params) if p.free]
        self.pi = np.full(model.n_p, -1, dtype=np.int64)
        self.pi[free_p] = np.arange(len(free_p)) + off
        off += len(free_p)
        self.n_theta = 0
        if mode == "network":
            for slot in self.networks:
                slot.theta_offset = off + self.n_theta
                self.n_theta += slot.spec.n_params
        self.theta_slice = slice(off, off + self.n_theta)
        off += self.n_theta
        self.n = off

        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for d, s in enumerate(model.states):
            lo[self.xi[:, :, 1:, d]] = s.lower
            hi[self.xi[:, :, 1:, d]] = s.upper
        for a, v in enumerate(model.algebraics):
            lo[self.yi[..., a]] = v.lower
            hi[self.yi[..., a]] = v.upper
        for b, v in enumerate(model.closures):
            lo[self.zi[..., b]] = v.lower
            hi[self.zi[..., b]] = v.upper
        for q in free_p:
            lo[self.pi[q]] = model.params[q].lower
            hi[self.pi[q]] = model.params[q].upper
        self.x_lower, self.x_upper = lo, hi

        # constraint rows -------------------------------------------------------
        tpts = scheme.point_times()  # (nfe, K)
        P = R * nfe * K
        rows_count = 0

        def take(shape):
            nonlocal rows_count
            size = int(np.prod(shape))
            r = np.arange(size).reshape(shape) + rows_count
            rows_count += size
            return r

        self.row_blocks = {}
        coll_rows = take((R, nfe, K, nx))
        self.row_blocks["collocation"] = slice(int(coll_rows.min()), rows_count)
        alg_rows = take((R, nfe, K, ny)) if ny else None
        self.row_blocks["algebraic"] = slice(rows_count - (0 if alg_rows is None else alg_rows.size), rows_count)
        clo_rows = None
        if mode in ("network", "network_fixed", "known") and nz:
            clo_rows = take((R, nfe, K, nz))
            self.row_blocks["closure"] = slice(int(clo_rows.min()), rows_count)
        else:
            self.row_blocks["closure"] = slice(rows_count, rows_count)
        cont_rows = take((R, nfe - 1, nx))
        self.row_blocks["continuity"] = slice(rows_count - cont_rows.size, rows_count)
        init_rows = take((R, nx))
        self.row_blocks["initial"] = slice(rows_count - init_rows.size, rows_count)
        n_eq = rows_count
        path_rows = take((R, nfe, K, model.n_path)) if model.n_path else None
        self.row_blocks["path"] = slice(n_eq, rows_count)
        self.m = rows_count
        self.c_lower = np.zeros(self.m)
        self.c_upper = np.zeros(self.m)
        if path_rows is not None:
            self.c_lower[path_rows.ravel()] = -np.inf

        # linear part --------------------------------------------------------------
        lr, lc, lv = [], [], []
        D = scheme.D  # (K+1, K)
        for k in range(K):
            for j in range(K + 1):
                if D[j, k] != 0.0:
                    lr.append(coll_rows[:, :, k, :].ravel())
                    lc.append(self.xi[:, :, j, :].ravel())
                    lv.append(np.full(R * nfe * nx, D[j, k]))
        if nfe > 1:
            lr.append(cont_rows.ravel())
            lc.append(self.xi[:, 1:, 0, :].ravel())
            lv.append(np.ones(cont_rows.size))
            for j in range(K + 1):
                wj = scheme.end_weights[j]
                if wj != 0.0:
                    lr.append(cont_rows.ravel())
                    lc.append(self.xi[:, :-1, j, :].ravel())
                    lv.append(np.full(cont_rows.size, -wj))
        lr.append(init_rows.ravel())
        lc.append(self.xi[:, 0, 0, :].ravel())
        lv.append(np.ones(init_rows.size))
        self.b_lin = np.zeros(self.m)
        self.b_lin[init_rows.ravel()] = np.array([model.x0(r) for r in range(R)]).ravel()
        if clo_rows is not None:
            lr.append(clo_rows.ravel())
            lc.append(self.zi.ravel())
            lv.append(np.ones(clo_rows.size))
        self.lin_rows = np.concatenate(lr)
        self.lin_cols = np.concatenate(lc)
        self.lin_vals = np.concatenate(lv)
        self.A_lin = sp.csr_matrix((self.lin_vals, (self.lin_rows, self.lin_cols)), shape=(self.m, self.n))

        # template blocks -------------------------------------------------------------
        n_loc = model.n_local
        gidx = np.full((R, nfe, K, n_loc), -1, dtype=np.int64)
        const = np.zeros((R, nfe, K, n_loc))
        gidx[..., :nx] = self.xi[:, :, 1:, :]
        gidx[..., nx : nx + ny] = self.yi
        gidx[..., nx + ny : nx + ny + nz] = self.zi
        pv = model.param_values() if p_guess is None else np.asarray(p_guess, float)
        for q in range(model.n_p):
            col = nx + ny + nz + q
            if self.pi[q] >= 0:
                gidx[..., col] = self.pi[q]
            else:
                const[..., col] = pv[q]
        const[..., -1] = tpts[None, :, :]
        gidx = gidx.reshape(P, n_loc)
        const = const.reshape(P, n_loc)
        self._gidx = gidx
        self._const = const
        hscale = np.broadcast_to(-scheme.h[None, :, None, None], (R, nfe, K, nx)).reshape(P, nx)
        self.blocks = [_Block(model.dynamics, gidx, const, coll_rows.reshape(P, nx), hscale.copy(), self.n)]
        if ny:
            self.blocks.append(_Block(model.algebraic, gidx, const, alg_rows.reshape(P, ny), np.ones((P, ny)), self.n))
        if model.n_path:
            self.blocks.append(
                _Block(model.path, gidx, const, path_rows.reshape(P, model.n_path), np.ones((P, model.n_path)), self.n)
            )
        self.net_blocks = []
        if mode == "known" and nz:
            if model.closure_eqs is None:
                raise MissingNetwork("known-closure mode needs closure equations")
            self.blocks.append(_Block(model.closure_eqs, gidx, const, clo_rows.reshape(P, nz), -np.ones((P, nz)), self.n))
        elif mode in ("network", "network_fixed") and nz:
            if not self.networks:
                raise MissingNetwork("closure outputs need a network")
            covered = sorted(o for s in self.networks for o in s.outputs)
            if covered != list(range(nz)):
                raise MissingNetwork("networks must cover every closure output exactly once")
            in_idx = gidx[:, list(model.network_inputs)]
            theta_fixed = None if theta_fixed is None else np.asarray(theta_fixed, dtype=float)
            toff = 0
            for slot in self.networks:
                outs = list(slot.outputs)
                if slot.spec.n_in != len(model.network_inputs) or slot.spec.n_out != len(outs):
                    raise MissingNetwork("network shape does not match the model")
                n_th = slot.spec.n_params
                rows = clo_rows.reshape(P, nz)[:, outs]
                if mode == "network":
                    tidx = np.arange(slot.theta_offset, slot.theta_offset + n_th)
                    fixed = None
                else:
                    tidx = None
                    fixed = theta_fixed[toff : toff + n_th]
                self.net_blocks.append(_NetBlock(slot, in_idx, rows, tidx, fixed))
                toff += n_th
        self.n_eq = n_eq
        self.coll_rows, self.alg_rows, self.clo_rows = coll_rows, alg_rows, clo_rows
        self.path_rows = path_rows

        # objective -----------------------------------------------------------------
        self._build_objective(obs, loss, mode)

        # fixed sparsity patterns -----------------------------------------------------------
        self.jac_rows = np.concatenate(
            [self.lin_rows] + [b.jrows for b in self.blocks] + [b.jrows for b in self.net_blocks]
        )
        self.jac_cols = np.concatenate(
            [self.lin_cols] + [b.jcols for b in self.blocks] + [b.jcols for b in self.net_blocks]
        )
        H = self._obj_hess
        self.hess_rows = np.concatenate([H.row] + [b.hrows for b in self.blocks] + [b.hrows for b in self.net_blocks])
        self.hess_cols = np.concatenate([H.col] + [b.hcols for b in self.blocks] + [b.hcols for b in self.net_blocks])
        self.dense_vars = np.arange(self.theta_slice.start, self.theta_slice.stop)
        self.dense_rows = (
            np.concatenate([b.rows.ravel() for b in self.net_blocks]) if self.net_blocks and mode == "network" else np.zeros(0, int)
        )
        self.x_init = self._default_guess()

    def _build_objective(self, obs, loss, mode):
        rows, cols, vals, target, weight = [], [], [], [], []
        nrow = 0
        self.n_obs = 0
        if obs is not None and len(obs):
            i, tau = self.scheme.locate(obs.t)
            B = lagrange_basis(self.scheme.tau, tau)  # (n_obs, K+1)
            n_obs = len(obs)
            for j in range(self.scheme.K + 1):
                rows.append(np.arange(n_obs))
                cols.append(self.xi[obs.traj, i, j, obs.state])
                vals.append(B[:, j])
            target.append(obs.value)
            weight.append(np.ones(n_obs))
            nrow = n_obs
            self.n_obs = n_obs
        self.A_data = sp.csr_matrix(
            (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
            shape=(nrow, self.n),
        )
        self.b_data = np.concatenate(target) if target else np.zeros(0)
        if mode == "network" and loss.lambda_r > 0 and self.n_theta:
            th = np.arange(self.theta_slice.start, self.theta_slice.stop)
            rows.append(nrow + np.arange(th.size))
            cols.append(th)
            vals.append(np.ones(th.size))
            target.append(np.zeros(th.size))
            weight.append(np.full(th.size, loss.lambda_r))
            nrow += th.size
        if mode == "free" and loss.lambda_s > 0 and self.model.n_z and self.scheme.K > 1:
            Dbar = self.scheme.Dbar  # Dbar[k, j] = lbar_j'(tau_k)
            R, nfe, K, nz = self.zi.shape
            base = nrow + np.arange(R * nfe * K * nz).reshape(R, nfe, K, nz)
            for k in range(K):
                for j in range(K):
                    rows.append(base[:, :, k, :].ravel())
                    cols.append(self.zi[:, :, j, :].ravel())
                    vals.append(np.full(R * nfe * nz, Dbar[k, j]))
            target.append(np.zeros(base.size))
            weight.append(np.full(base.size, loss.lambda_s))
            nrow += base.size
        if rows:
            A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nrow, self.n))
            self.b_obj = np.concatenate(target)
            self.w_obj = np.concatenate(weight)
        else:
            A = sp.csr_matrix((0, self.n))
            self.b_obj = np.zeros(0)
            self.w_obj = np.zeros(0)
        self.A_obj = A
        self.A_obj_T = A.T.tocsr()
        H = (A.T @ sp.diags(2.0 * self.w_obj) @ A).tocoo()
        keep = H.row >= H.col
        self._obj_hess = sp.coo_matrix((H.data[keep], (H.row[keep], H.col[keep])), shape=(self.n, self.n))

    def _default_guess(self):
        w = np.zeros(self.n)
        R = self.n_traj
        for r in range(R):
            w[self.xi[r]] = self.model.x0(r)[None, None, :]
        free = self.pi >= 0
        w[self.pi[free]] = self.model.param_values()[free]
        return self._push_inside(w)

    def _push_inside(self, w):
        lo, hi = self.x_lower, self.x_upper
        both = np.isfinite(lo) & np.isfinite(hi)
        w = np.where(np.isfinite(lo) & (w < lo), lo, w)
        w = np.where(np.isfinite(hi) & (w > hi), hi, w)
        w[both] = np.clip(w[both], lo[both], hi[both])
        return w

    # solver interface -----------------------------------------------------------------
    def objective(self, w):
        r = self.A_obj @ w - self.b_obj
        return float(np.dot(self.w_obj * r, r))

    def gradient(self, w):
        r = self.A_obj @ w - self.b_obj
        return self.A_obj_T @ (2.0 * self.w_obj * r)

    def constraints(self, w):
        c = self.A_lin @ w - self.b_lin
        for b in self.blocks:
            b.add_values(w, c)
        for b in self.net_blocks:
            b.add_values(w, c)
        return c

    def jacobian(self, w):
        parts = [self.lin_vals] + [b.jac_values(w) for b in self.blocks] + [b.jac_values(w) for b in self.net_blocks]
        return np.concatenate(parts)

    def hessian(self, w, lam, obj_factor):
        parts = [obj_factor * self._obj_hess.data]
        parts += [b.hess_values(w, lam) for b in self.blocks]
        parts += [b.hess_values(w, lam) for b in self.net_blocks]
        return np.concatenate(parts)

    # helpers ---------------------------------------------------------------------------
    def data_loss(self, w):
        r = self.A_data @ w - self.b_data
        return float(r @ r)

    def regularization(self, w):
        th = w[self.theta_slice]
        return float(self.loss.lambda_r * th @ th) if self.mode == "network" else 0.0

    def theta(self, w):
        return np.asarray(w[self.theta_slice])

    def unpack(self, w):
        """Nodal values: ``x (R, nfe, K+1, nx)``, ``y`` and ``z`` ``(R, nfe, K, .)``."""
        w = np.asarray(w)
        return w[self.xi], w[self.yi], w[self.zi]

    def set_trajectories(self, w, x=None, y=None, z=None):
        w = np.array(w, dtype=float, copy=True)
        if x is not None:
            w[self.xi] = x
        if y is not None:
            w[self.yi] = y
        if z is not None:
            w[self.zi] = z
        return w

    def guess_from(self, fx, fy=None, fz=None, theta=None, p=None):
        """Initial point from callables ``f(traj, times) -> (len(times), n)``."""
        w = self._default_guess()
        nodes = self.scheme.node_times()
        pts = self.scheme.point_times()
        for r in range(self.n_traj):
            w[self.xi[r]] = np.asarray(fx(r, nodes.ravel())).reshape(self.scheme.n_fe, self.scheme.K + 1, -1)
            if fy is not None and self.model.n_y:
                w[self.yi[r]] = np.asarray(fy(r, pts.ravel())).reshape(self.scheme.n_fe, self.scheme.K, -1)
            if fz is not None and self.model.n_z:
                w[self.zi[r]] = np.asarray(fz(r, pts.ravel())).reshape(self.scheme.n_fe, self.scheme.K, -1)
        if theta is not None and self.n_theta:
            w[self.theta_slice] = theta
        if p is not None:
            free = self.pi >= 0
            w[self.pi[free]] = np.asarray(p, float)[free]
        return self._push_inside(w)

    def interpolate(self, w, traj, t):
        """States, algebraics and closures at times ``t`` of trajectory ``traj``.

        Returns
        -------
        x : ndarray, shape (len(t), n_x)
        y : ndarray, shape (len(t), n_y)
        z : ndarray, shape (len(t), n_z)
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i, tau = self.scheme.locate(t)
        X, Y, Z = self.unpack(w)
        B = lagrange_basis(self.scheme.tau, tau)
        x = np.einsum("qj,qjd->qd", B, X[traj, i])
        if self.scheme.K > 1:
            Bb = lagrange_basis(self.scheme.tau[1:], tau)
        else:
            Bb = np.ones((t.size, 1))
        y = np.einsum("qj,qjd->qd", Bb, Y[traj, i])
        z = np.einsum("qj,qjd->qd", Bb, Z[traj, i])
        return x, y, z

    def point_arrays(self, w):
        """Stacked local vectors at every collocation point, ``(R, nfe, K, n_local)``."""
        X = self._const.copy()
        mask = self._gidx >= 0
        X[mask] = np.asarray(w)[self._gidx[mask]]
        R, nfe, K = self.n_traj, self.scheme.n_fe, self.scheme.K
        return X.reshape(R, nfe, K, -1)

    def network_points(self, w):
        """Network inputs and the closure values at every collocation point."""
        X = self.point_arrays(w)
        m = self.model
        ins = X[..., list(m.network_inputs)].reshape(-1, len(m.network_inputs))
        z = X[..., m.n_x + m.n_y : m.n_x + m.n_y + m.n_z].reshape(-1, m.n_z)
        return ins, z


def transcribe(model, scheme, obs=None, loss=None, mode="network", networks=None, theta=None, p_guess=None):
    """Collocation NLP for ``model``.

    Parameters
    ----------
    model : ContinuousModel
    scheme : CollocationScheme
    obs : ObservationSet, optional
        Observations entering the least-squares objective.
    loss : LossSpec, optional
    mode : {"network", "network_fixed", "free", "known"}
        How the closure outputs are tied down: by trainable networks, by
        networks with fixed parameters ``theta``, not at all (with an
        optional smoothness penalty), or by the model's closure equations.
    networks : list of NetworkSlot
    theta : array_like, optional
        Parameters for ``mode="network_fixed"``.
    """
    from .ocp import LossSpec

    if mode not in ("network", "network_fixed", "free", "known"):
        raise ValueError(f"unknown closure mode {mode!r}")
    if tuple(scheme.horizon) != tuple(model.horizon):
        raise OutOfHorizon("scheme and model horizons differ")
    if obs is not None:
        t0, tf = model.horizon
        tol = 1e-12 * max(1.0, tf - t0)
        if len(obs) and (obs.t.min() < t0 - tol or obs.t.max() > tf + tol):
            raise ObservationOutsideElements("observation time outside every element")
        obs.validate(model)
    if mode in ("network", "network_fixed") and model.n_z and not networks:
        raise MissingNetwork("closure outputs need a network")
    if mode == "network_fixed" and model.n_z and theta is None:
        raise MissingNetwork("fixed-network mode needs parameters")
    return Transcription(model, scheme, obs, loss or LossSpec(), mode, networks, theta, p_guess)


def constraint_count(n_traj, n_x, n_fe, K):
    """Rows of a transcription without algebraics, closures or path constraints."""
    return n_traj * (n_x * n_fe * K + n_x * (n_fe - 1) + n_x)
