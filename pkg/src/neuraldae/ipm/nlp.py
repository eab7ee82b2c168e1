"""Problem interface of the interior-point solver.

User problems follow the familiar callback layout

    minimize f(x)  s.t.  c_L <= c(x) <= c_U,  x_L <= x <= x_U

with a fixed sparsity pattern for the constraint Jacobian and the lower
triangle of the Hessian of the Lagrangian (duplicates allowed; they are
summed).  :class:`StandardNlp` rewrites such a problem as

    minimize f(x)  s.t.  c(x) - c_L = 0 (equality rows),
                         c(x) - s   = 0 (inequality rows), c_L <= s <= c_U

and applies gradient-based scaling of the objective and of every row.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..expr import ExprFunction

__all__ = ["CooPattern", "ExprNlp", "StandardNlp"]


class CooPattern:
    """Fixed COO pattern turned into CSR matrices with summed duplicates."""

    def __init__(self, rows, cols, shape):
        self.shape = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        key = rows * shape[1] + cols
        uniq, inv = np.unique(key, return_inverse=True)
        self._inv = inv
        self._n = uniq.size
        r = uniq // shape[1]
        c = uniq % shape[1]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=shape[0]))])
        self.indices = c
        self.urows = r
        self.ucols = c

    def compress(self, vals):
        return np.bincount(self._inv, weights=vals, minlength=self._n)

    def matrix(self, vals):
        return sp.csr_matrix((self.compress(vals), self.indices, self.indptr), shape=self.shape)


class ExprNlp:
    """Problem defined by expression-graph functions.

    Parameters
    ----------
    objective : ExprFunction
        Scalar objective.
    constraints : ExprFunction, optional
    x_lower, x_upper, c_lower, c_upper : array_like, optional
        Bounds; constraints default to equalities ``c(x) = 0``.
    x_init : array_like, optional
    """

    def __init__(self, objective, constraints=None, x_lower=None, x_upper=None, c_lower=None, c_upper=None, x_init=None):
        self.f = objective
        self.c = constraints
        self.n = objective.n_vars
        self.m = 0 if constraints is None else constraints.n_out
        self.x_lower = np.full(self.n, -np.inf) if x_lower is None else np.asarray(x_lower, float)
        self.x_upper = np.full(self.n, np.inf) if x_upper is None else np.asarray(x_upper, float)
        self.c_lower = np.zeros(self.m) if c_lower is None else np.asarray(c_lower, float)
        self.c_upper = np.zeros(self.m) if c_upper is None else np.asarray(c_upper, float)
        self.x_init = np.zeros(self.n) if x_init is None else np.asarray(x_init, float)
        if constraints is not None:
            self.jac_rows, self.jac_cols = constraints.jac_rows, constraints.jac_cols
            hr = [objective.hess_rows, constraints.hess_rows]
            hc = [objective.hess_cols, constraints.hess_cols]
        else:
            self.jac_rows = self.jac_cols = np.zeros(0, dtype=np.int64)
            hr, hc = [objective.hess_rows], [objective.hess_cols]
        self.hess_rows = np.concatenate(hr)
        self.hess_cols = np.concatenate(hc)

    def objective(self, x):
        return float(self.f.eval(x)[0])

    def gradient(self, x):
        g = np.zeros(self.n)
        g[self.f.jac_cols] = self.f.jac_batch(x[None, :])[0]
        return g

    def constraints(self, x):
        return np.zeros(0) if self.c is None else self.c.eval(x)

    def jacobian(self, x):
        return np.zeros(0) if self.c is None else self.c.jac_batch(x[None, :])[0]

    def hessian(self, x, lam, obj_factor):
        parts = [self.f.hess_batch(x[None, :], np.array([[obj_factor]]))[0]]
        if self.c is not None:
            parts.append(self.c.hess_batch(x[None, :], np.asarray(lam, float)[None, :])[0])
        return np.concatenate(parts)


class StandardNlp:
    """Equality-constrained, bound-constrained, scaled view of a problem.

    Parameters
    ----------
    problem : object
        Callback problem (see module docstring).
    scaling : tuple or None or False
        ``(obj_scale, row_scale)`` to reuse, ``None`` to compute from the
        gradients at the initial point, ``False`` for no scaling.
    max_gradient : float
        Target bound on scaled gradient entries.
    max_hessian : float, optional
        Target bound on scaled entries of the objective Hessian at the
        initial point.  Off by default; useful when a penalty term has a
        vanishing gradient but a large curvature at the start.
    """

    def __init__(self, problem, scaling=None, max_gradient=100.0, x_init=None, max_hessian=None):
        self.problem = problem
        n, m = problem.n, problem.m
        self.n_orig = n
        self.m = m
        cl, cu = np.asarray(problem.c_lower, float), np.asarray(problem.c_upper, float)
        self.ineq = np.flatnonzero(cl < cu)
        self.n_slack = self.ineq.size
        self.n = n + self.n_slack
        self.x_lower = np.concatenate([problem.x_lower, cl[self.ineq]])
        self.x_upper = np.concatenate([problem.x_upper, cu[self.ineq]])
        self.rhs = np.where(cl < cu, 0.0, cl)
        jr = np.asarray(problem.jac_rows, dtype=np.int64)
        jc = np.asarray(problem.jac_cols, dtype=np.int64)
        self.jac_rows = np.concatenate([jr, self.ineq])
        self.jac_cols = np.concatenate([jc, n + np.arange(self.n_slack)])
        self.hess_rows = np.asarray(problem.hess_rows, dtype=np.int64)
        self.hess_cols = np.asarray(problem.hess_cols, dtype=np.int64)
        self.jac_pattern = CooPattern(self.jac_rows, self.jac_cols, (m, self.n))
        self.dense_vars = np.asarray(getattr(problem, "dense_vars", np.zeros(0, int)), dtype=np.int64)
        self.dense_rows = np.asarray(getattr(problem, "dense_rows", np.zeros(0, int)), dtype=np.int64)

        x0 = np.asarray(problem.x_init if x_init is None else x_init, float)
        c0 = problem.constraints(x0)
        self.x_init = np.concatenate([x0, np.clip(c0[self.ineq], self.x_lower[n:], self.x_upper[n:])])
        if scaling is False:
            self.obj_scale = 1.0
            self.row_scale = np.ones(m)
        elif scaling is None:
            g = problem.gradient(x0)
            gmax = np.max(np.abs(g)) if g.size else 0.0
            self.obj_scale = min(1.0, max_gradient / gmax) if gmax > 0 else 1.0
            if max_hessian is not None:
                h = problem.hessian(x0, np.zeros(m), 1.0)
                hmax = np.max(np.abs(h)) if h.size else 0.0
                if hmax > max_hessian:
                    self.obj_scale = min(self.obj_scale, max_hessian / hmax)
            J = sp.csr_matrix((problem.jacobian(x0), (jr, jc)), shape=(m, n))
            rmax = np.zeros(m)
            if J.nnz:
                rmax = np.asarray(abs(J).max(axis=1).todense()).ravel()
            self.row_scale = np.where(rmax > max_gradient, max_gradient / np.maximum(rmax, 1e-300), 1.0)
            self.row_scale = np.maximum(self.row_scale, 1e-8)
        else:
            self.obj_scale, self.row_scale = float(scaling[0]), np.asarray(scaling[1], float)
        self._jscale = np.concatenate([self.row_scale[jr], -self.row_scale[self.ineq]])

    @property
    def scaling(self):
        return (self.obj_scale, self.row_scale.copy())

    def split(self, v):
        return v[: self.n_orig], v[self.n_orig :]

    def objective(self, v):
        return self.obj_scale * self.problem.objective(v[: self.n_orig])

    def gradient(self, v):
        g = np.zeros(self.n)
        g[: self.n_orig] = self.obj_scale * self.problem.gradient(v[: self.n_orig])
        return g

    def constraints_unscaled(self, v):
        x, s = self.split(v)
        c = self.problem.constraints(x) - self.rhs
        c[self.ineq] -= s
        return c

    def constraints(self, v):
        return self.row_scale * self.constraints_unscaled(v)

    def jacobian(self, v):
        vals = self.problem.jacobian(v[: self.n_orig])
        return np.concatenate([vals, np.ones(self.n_slack)]) * self._jscale

    def jacobian_matrix(self, v):
        return self.jac_pattern.matrix(self.jacobian(v))

    def hessian(self, v, lam, obj_factor=1.0):
        return self.problem.hessian(v[: self.n_orig], lam * self.row_scale, obj_factor * self.obj_scale)

    def unscale_multipliers(self, lam):
        return lam * self.row_scale / self.obj_scale
