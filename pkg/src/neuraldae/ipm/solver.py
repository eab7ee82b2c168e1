"""Primal-dual interior-point method with a filter line search.

The solver works on a :class:`~neuraldae.ipm.nlp.StandardNlp` (equalities
plus bounds, scaled).  Every iteration solves the primal-dual system

    [ W + Sigma + dw I    J^T  ] [dx  ]     [ grad phi_mu + J^T lam ]
    [ J                 -dc I  ] [dlam] = - [ c                     ]

where ``W`` is the exact Hessian of the Lagrangian or an L-BFGS model of it.
The inertia of the factorized matrix is corrected to ``(n, m, 0)`` by
increasing ``dw`` (and ``dc`` when zero pivots show up).  In L-BFGS mode only
``xi I + Sigma`` enters the factorized matrix; the low-rank part is applied
with the Sherman-Morrison-Woodbury identity.

Step sizes come from the fraction-to-boundary rule and a two-entry filter
(constraint violation, barrier objective) with an Armijo condition when the
step promises enough decrease of the barrier objective.  When the line
search fails, a proximal l1 feasibility problem is solved by a nested run of
the same method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..expr import DomainError
from .lbfgs import LbfgsMemory
from .linsolve import LdlFactor, SingularMatrix
from .nlp import StandardNlp

__all__ = [
    "IpmIterate",
    "IpmOptions",
    "IpmSolution",
    "SingularSystem",
    "assemble_and_solve_step",
    "kkt_residual",
    "solve",
]

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"
EVAL_ERROR = "EvalError"

_EPS = np.finfo(float).eps


class SingularSystem(RuntimeError):
    """The primal-dual matrix could not be regularized to the right inertia."""


@dataclass
class IpmOptions:
    """Solver options.

    Parameters
    ----------
    tol : float
        Tolerance on the scaled KKT error.
    constr_viol_tol : float, optional
        Tolerance on the unscaled constraint violation; defaults to ``tol``.
    hessian_mode : {"exact", "lbfgs"}
    lbfgs_memory : int
    mu_init : float
        Initial barrier parameter for cold starts.
    """

    tol: float = 1e-8
    constr_viol_tol: float | None = None
    max_iter: int = 3000
    hessian_mode: str = "exact"
    lbfgs_memory: int = 6
    mu_init: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    lambda_max: float = 1e3
    kappa_sigma: float = 1e10
    kappa_d: float = 1e-5
    s_max: float = 100.0
    delta_h0: float = 1e-4
    delta_h_growth: float = 8.0
    delta_h_max: float = 1e40
    delta_c: float = 1e-8
    kappa_c: float = 0.25
    max_gradient: float = 100.0
    max_hessian: float | None = None
    resto_max_iter: int = 300
    max_backtracks: int = 40
    verbose: bool = False


@dataclass
class IpmIterate:
    """Primal-dual point of a :class:`StandardNlp`.

    ``zl`` and ``zu`` have full length; entries without a finite bound are
    zero.  ``row_class`` optionally tags each equality row (for instance
    mechanistic versus neural rows).
    """

    x: np.ndarray
    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    mu: float
    delta_h: float = 0.0
    delta_c: float = 0.0
    iteration: int = 0
    row_class: np.ndarray | None = None

    def copy(self):
        return replace(self, x=self.x.copy(), lam=self.lam.copy(), zl=self.zl.copy(), zu=self.zu.copy())


@dataclass
class IpmSolution:
    """Result of :func:`solve`.

    ``x``, ``lam``, ``z_lower`` and ``z_upper`` refer to the user problem
    (unscaled, slacks removed); ``iterate`` is the final scaled iterate and
    together with ``scaling`` allows a warm start.
    """

    status: str
    x: np.ndarray
    lam: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    kkt: dict
    iterations: int
    log: list = field(default_factory=list)
    iterate: IpmIterate | None = None
    scaling: tuple | None = None
    message: str = ""
    n_factorizations: int = 0
    error: Exception | None = None

    @property
    def success(self):
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# residuals


class _Bounds:
    def __init__(self, nlp):
        self.lo = np.asarray(nlp.x_lower, float)
        self.hi = np.asarray(nlp.x_upper, float)
        self.has_l = np.isfinite(self.lo)
        self.has_u = np.isfinite(self.hi)
        self.l_only = self.has_l & ~self.has_u
        self.u_only = self.has_u & ~self.has_l
        self.n_bounds = int(self.has_l.sum() + self.has_u.sum())

    def slacks(self, x):
        sl = np.where(self.has_l, x - np.where(self.has_l, self.lo, 0.0), 1.0)
        su = np.where(self.has_u, np.where(self.has_u, self.hi, 0.0) - x, 1.0)
        return sl, su


def _dual_residual(grad, jt_lam, zl, zu):
    return grad + jt_lam - zl + zu


def _kkt_parts(nlp, bounds, x, lam, zl, zu, mu, s_max, grad=None, c=None, J=None):
    if grad is None:
        grad = nlp.gradient(x)
    if c is None:
        c = nlp.constraints(x)
    if J is None:
        J = nlp.jacobian_matrix(x)
    rd = _dual_residual(grad, J.T @ lam, zl, zu)
    sl, su = bounds.slacks(x)
    comp = np.concatenate([(sl * zl - mu)[bounds.has_l], (su * zu - mu)[bounds.has_u]])
    n, m = x.size, lam.size
    nz = bounds.n_bounds
    z1 = float(np.abs(zl).sum() + np.abs(zu).sum())
    s_d = max(s_max, (float(np.abs(lam).sum()) + z1) / max(m + nz, 1)) / s_max
    s_c = max(s_max, z1 / max(nz, 1)) / s_max
    stat = float(np.max(np.abs(rd))) if n else 0.0
    feas = float(np.max(np.abs(c))) if m else 0.0
    cmp = float(np.max(np.abs(comp))) if comp.size else 0.0
    return {
        "stationarity": stat / s_d,
        "feasibility": feas,
        "complementarity": cmp / s_c,
        "total": max(stat / s_d, feas, cmp / s_c),
    }


def kkt_residual(nlp, iterate, s_max=100.0):
    """Scaled KKT residual components of ``iterate`` for the barrier ``iterate.mu``.

    Stationarity and complementarity are divided by the usual multiplier
    based scaling factors (no larger than the multipliers' mean magnitude over
    ``s_max``); feasibility is the infinity norm of the (row-scaled)
    constraints.  Pass ``mu = 0`` for the optimality error.

    Returns
    -------
    dict
        Keys ``stationarity``, ``feasibility``, ``complementarity``, ``total``.
    """
    bounds = _Bounds(nlp)
    return _kkt_parts(nlp, bounds, iterate.x, iterate.lam, iterate.zl, iterate.zu, iterate.mu, s_max)


# --------------------------------------------------------------------------
# linear algebra


class _KktSystem:
    """Assembly, inertia correction and solution of the primal-dual system."""

    def __init__(self, nlp, opts, lbfgs):
        self.nlp = nlp
        self.opts = opts
        self.n = n = nlp.n
        self.m = m = nlp.m
        self.lbfgs = lbfgs
        jr, jc = np.asarray(nlp.jac_rows), np.asarray(nlp.jac_cols)
        ar = np.arange(n)
        ac = n + np.arange(m)
        if lbfgs:
            hr = hc = np.zeros(0, dtype=np.int64)
        else:
            hr, hc = np.asarray(nlp.hess_rows), np.asarray(nlp.hess_cols)
        self.n_h = hr.size
        self.n_j = jr.size
        self.rows = np.concatenate([hr, ar, n + jr, ac]).astype(np.int64)
        self.cols = np.concatenate([hc, ar, jc, ac]).astype(np.int64)
        self.delta_last = 0.0
        self.n_factorizations = 0

    def _factor(self, hvals, diag, jvals, dw, dc, zero_tol):
        vals = np.concatenate([hvals, diag + dw, jvals, np.full(self.m, -dc)])
        if dc > 0.0:
            # regularized constraint pivots are of order dc and must not count as zero
            zero_tol = min(zero_tol, 1e-2 * dc)
        self.n_factorizations += 1
        return LdlFactor(self.n + self.m, self.rows, self.cols, vals, zero_tol=zero_tol)

    def factor(self, hvals, diag, jvals, mu):
        """Factor with inertia correction; returns ``(factor, dw, dc, n_corrections)``."""
        o = self.opts
        n, m = self.n, self.m
        scale = 1.0
        if hvals.size:
            scale = max(scale, float(np.max(np.abs(hvals))))
        if jvals.size:
            scale = max(scale, float(np.max(np.abs(jvals))))
        zero_tol = 1e-13 * scale
        dw, dc = 0.0, 0.0
        tries = 0
        F = self._factor(hvals, diag, jvals, dw, dc, zero_tol)
        if F.inertia == (n, m, 0):
            return F, dw, dc, tries
        if F.inertia[2] > 0:
            dc = o.delta_c * mu**o.kappa_c
            tries += 1
            F = self._factor(hvals, diag, jvals, dw, dc, zero_tol)
            if F.inertia == (n, m, 0):
                return F, dw, dc, tries
        if self.delta_last == 0.0:
            dw = o.delta_h0 * max(1.0, float(np.max(np.abs(hvals))) if hvals.size else 1.0)
        else:
            dw = max(1e-20, self.delta_last / 3.0)
        while True:
            tries += 1
            F = self._factor(hvals, diag, jvals, dw, dc, zero_tol)
            if F.inertia == (n, m, 0):
                self.delta_last = dw
                return F, dw, dc, tries
            if F.inertia[2] > 0 and dc == 0.0:
                dc = o.delta_c * mu**o.kappa_c
            dw *= o.delta_h_growth
            if dw > o.delta_h_max:
                raise SingularSystem("inertia correction exceeded its maximum")


# --------------------------------------------------------------------------
# the method


class _Solver:
    def __init__(self, nlp, opts, callback=None, depth=0):
        self.nlp = nlp
        self.o = opts
        self.b = _Bounds(nlp)
        self.lbfgs = opts.hessian_mode == "lbfgs"
        if opts.hessian_mode not in ("exact", "lbfgs"):
            raise ValueError(f"unknown hessian_mode {opts.hessian_mode!r}")
        self.kkt = _KktSystem(nlp, opts, self.lbfgs)
        self.mem = LbfgsMemory(opts.lbfgs_memory) if self.lbfgs else None
        self.callback = callback
        self.depth = depth
        self.log = []
        self.t0 = time.perf_counter()
        self.cviol_tol = opts.tol if opts.constr_viol_tol is None else opts.constr_viol_tol

    # ---- evaluation helpers

    def _eval_point(self, x):
        f = self.nlp.objective(x)
        c = self.nlp.constraints(x)
        if not (np.isfinite(f) and np.all(np.isfinite(c))):
            raise DomainError(-1, "nonfinite")
        return f, c

    def barrier(self, f, x, mu):
        b = self.b
        sl, su = b.slacks(x)
        val = f - mu * (np.log(sl[b.has_l]).sum() + np.log(su[b.has_u]).sum())
        val += self.o.kappa_d * mu * (sl[b.l_only].sum() + su[b.u_only].sum())
        return float(val)

    def barrier_grad(self, g, x, mu):
        b = self.b
        sl, su = b.slacks(x)
        gb = g.copy()
        gb[b.has_l] -= mu / sl[b.has_l]
        gb[b.has_u] += mu / su[b.has_u]
        gb[b.l_only] += self.o.kappa_d * mu
        gb[b.u_only] -= self.o.kappa_d * mu
        return gb

    def push(self, x):
        b, o = self.b, self.o
        x = x.copy()
        lo, hi = b.lo, b.hi
        both = b.has_l & b.has_u
        width = np.where(both, hi - lo, np.inf)
        pl = np.minimum(o.bound_push * np.maximum(1.0, np.abs(np.where(b.has_l, lo, 0.0))), o.bound_frac * width)
        pu = np.minimum(o.bound_push * np.maximum(1.0, np.abs(np.where(b.has_u, hi, 0.0))), o.bound_frac * width)
        x = np.where(b.has_l, np.maximum(x, np.where(b.has_l, lo, 0.0) + pl), x)
        x = np.where(b.has_u, np.minimum(x, np.where(b.has_u, hi, 0.0) - pu), x)
        fixed = both & (width <= 0)
        if np.any(fixed):
            raise ValueError("fixed variables (equal bounds) are not supported")
        return x

    def interior(self, x):
        """Move ``x`` strictly inside its bounds with a tiny margin (warm starts)."""
        b = self.b
        lo, hi = np.where(b.has_l, b.lo, -np.inf), np.where(b.has_u, b.hi, np.inf)
        eps = 1e-10 * np.maximum(1.0, np.abs(x))
        both = b.has_l & b.has_u
        eps = np.where(both, np.minimum(eps, 0.25 * (hi - lo)), eps)
        return np.clip(x, lo + eps, hi - eps)

    def ls_multipliers(self, g, jvals, zl, zu):
        """Least-squares estimate of ``lam`` from the stationarity condition, clipped."""
        n, m = self.nlp.n, self.nlp.m
        if m == 0:
            return np.zeros(0)
        K = _KktSystem(self.nlp, self.o, lbfgs=True)
        try:
            F = K._factor(np.zeros(0), np.ones(n), jvals, 0.0, 0.0, 1e-13)
            if F.singular:
                return np.zeros(m)
            rhs = np.concatenate([-(g - zl + zu), np.zeros(m)])
            lam = F.solve(rhs)[n:]
        except SingularMatrix:
            return np.zeros(m)
        return np.clip(lam, -self.o.lambda_max, self.o.lambda_max)

    def safeguard_z(self, x, zl, zu, mu):
        b, k = self.b, self.o.kappa_sigma
        sl, su = b.slacks(x)
        zl = np.where(b.has_l, np.clip(zl, mu / (k * sl), k * mu / sl), 0.0)
        zu = np.where(b.has_u, np.clip(zu, mu / (k * su), k * mu / su), 0.0)
        return zl, zu

    # ---- steps

    def direction(self, x, lam, zl, zu, mu, g, J, jvals, c):
        """Newton direction ``(dx, dlam, dzl, dzu)`` plus correction record."""
        b, n = self.b, self.nlp.n
        sl, su = b.slacks(x)
        sig = np.where(b.has_l, zl / sl, 0.0) + np.where(b.has_u, zu / su, 0.0)
        gb = self.barrier_grad(g, x, mu)
        rhs = -np.concatenate([gb + J.T @ lam, c])
        if self.lbfgs:
            xi, U, Q = self.mem.compact_q()
            F, dw, dc, tries = self.kkt.factor(np.zeros(0), sig + xi, jvals, mu)
            if U is None:
                sol = F.solve(rhs)
            else:
                Ubar = np.vstack([U, np.zeros((self.nlp.m, U.shape[1]))])
                KU = np.column_stack([F.solve(Ubar[:, k]) for k in range(U.shape[1])])
                C = Q - Ubar.T @ KU
                y = F.solve(rhs)
                sol = y + KU @ np.linalg.solve(C, Ubar.T @ y)
        else:
            hv = self.nlp.hessian(x, lam, 1.0)
            F, dw, dc, tries = self.kkt.factor(hv, sig, jvals, mu)
            sol = F.solve(rhs)
        dx, dlam = sol[:n], sol[n:]
        dzl = np.where(b.has_l, (mu - sl * zl - zl * dx) / sl, 0.0)
        dzu = np.where(b.has_u, (mu - su * zu + zu * dx) / su, 0.0)
        return dx, dlam, dzl, dzu, {"delta_h": dw, "delta_c": dc, "corrections": tries, "factor": F}

    def max_step(self, x, dx, zl, zu, dzl, dzu, tau):
        b = self.b
        sl, su = b.slacks(x)
        ap = 1.0
        m = b.has_l & (dx < 0)
        if np.any(m):
            ap = min(ap, float(np.min(-tau * sl[m] / dx[m])))
        m = b.has_u & (dx > 0)
        if np.any(m):
            ap = min(ap, float(np.min(tau * su[m] / dx[m])))
        ad = 1.0
        m = b.has_l & (dzl < 0)
        if np.any(m):
            ad = min(ad, float(np.min(-tau * zl[m] / dzl[m])))
        m = b.has_u & (dzu < 0)
        if np.any(m):
            ad = min(ad, float(np.min(-tau * zu[m] / dzu[m])))
        return ap, ad

    # ---- main loop

    def run(self, x0=None, warm=None):
        nlp, o, b = self.nlp, self.o, self.b
        n, m = nlp.n, nlp.m
        status, message, error = MAX_ITER, "", None
        if warm is not None:
            x = self.interior(np.asarray(warm.x, float))
            lam = np.asarray(warm.lam, float).copy()
            mu = float(warm.mu)
            zl, zu = self.safeguard_z(x, np.where(b.has_l, warm.zl, 0.0), np.where(b.has_u, warm.zu, 0.0), mu)
            self.kkt.delta_last = warm.delta_h
        else:
            x = self.push(nlp.x_init if x0 is None else np.asarray(x0, float))
            mu = o.mu_init
            sl, su = b.slacks(x)
            zl = np.where(b.has_l, mu / sl, 0.0)
            zu = np.where(b.has_u, mu / su, 0.0)
            lam = None
        try:
            f, c = self._eval_point(x)
            g = nlp.gradient(x)
            jvals = nlp.jacobian(x)
            J = nlp.jac_pattern.matrix(jvals)
        except DomainError as e:
            return self._finish(EVAL_ERROR, x, np.zeros(m), zl, zu, mu, 0, f"evaluation failed at the start point: {e}", e)
        if lam is None:
            lam = self.ls_multipliers(g, jvals, zl, zu)

        theta0 = float(np.abs(c).sum())
        theta_max = 1e4 * max(1.0, theta0)
        theta_min = 1e-4 * max(1.0, theta0)
        filt = []
        it = 0
        self._resto_count = 0
        while True:
            # optimality and barrier update
            e0 = _kkt_parts(nlp, b, x, lam, zl, zu, 0.0, o.s_max, g, c, J)
            cviol = float(np.max(np.abs(c / nlp.row_scale))) if m and hasattr(nlp, "row_scale") else e0["feasibility"]
            if e0["total"] <= o.tol and cviol <= self.cviol_tol:
                status = OPTIMAL
                break
            if self.callback is not None and self.callback(x, lam, zl, zu):
                status, message = OPTIMAL, "stopped by callback"
                break
            if it >= o.max_iter:
                status, message = MAX_ITER, "maximum number of iterations"
                break
            while True:
                emu = _kkt_parts(nlp, b, x, lam, zl, zu, mu, o.s_max, g, c, J)["total"]
                if emu > o.kappa_eps * mu or mu <= o.tol / 10.0:
                    break
                new_mu = max(o.tol / 10.0, min(o.kappa_mu * mu, mu**o.theta_mu))
                if new_mu >= mu:
                    break
                mu = new_mu
                filt = []
            tau = max(0.99, 1.0 - mu)

            try:
                dx, dlam, dzl, dzu, rec = self.direction(x, lam, zl, zu, mu, g, J, jvals, c)
            except (SingularSystem, SingularMatrix) as e:
                rec = {"delta_h": float("nan"), "delta_c": 0.0, "corrections": -1}
                dx = None
                err = e
            ap_max = ad = 0.0
            accepted = False
            n_bt = 0
            if dx is not None:
                ap_max, ad = self.max_step(x, dx, zl, zu, dzl, dzu, tau)
                phi = self.barrier(f, x, mu)
                gphi = float(self.barrier_grad(g, x, mu) @ dx)
                theta = float(np.abs(c).sum())
                tiny = np.max(np.abs(dx) / (1.0 + np.abs(x))) < 10 * _EPS if n else True
                alpha = ap_max
                a_min = self._alpha_min(theta, gphi, theta_min)
                while True:
                    xt = x + alpha * dx
                    try:
                        ft, ct = self._eval_point(xt)
                        ok = True
                    except DomainError:
                        ok = False
                    if ok:
                        thetat = float(np.abs(ct).sum())
                        phit = self.barrier(ft, xt, mu)
                        acc, armijo_step = self._acceptable(theta, phi, gphi, thetat, phit, alpha, filt, theta_max, theta_min)
                        if acc or tiny:
                            accepted = True
                            if not armijo_step:
                                filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))
                            break
                    n_bt += 1
                    alpha *= 0.5
                    if alpha < a_min or n_bt > o.max_backtracks:
                        break
            if not accepted:
                if dx is None and self.depth > 0:
                    status, message, error = INFEASIBLE, f"step computation failed: {err}", err
                    break
                if self.depth > 0:
                    status, message = INFEASIBLE, "line search failed in feasibility restoration"
                    break
                res = self._restore(x, lam, zl, zu, mu, filt, c, f)
                self._resto_count += 1
                if res is None:
                    status, message = INFEASIBLE, "feasibility restoration failed (locally infeasible)"
                    break
                x = res
                try:
                    f, c = self._eval_point(x)
                    g = nlp.gradient(x)
                    jvals = nlp.jacobian(x)
                    J = nlp.jac_pattern.matrix(jvals)
                except DomainError as e:
                    status, message, error = EVAL_ERROR, str(e), e
                    break
                sl, su = b.slacks(x)
                zl = np.where(b.has_l, mu / sl, 0.0)
                zu = np.where(b.has_u, mu / su, 0.0)
                lam = self.ls_multipliers(g, jvals, zl, zu)
                if self.lbfgs:
                    self.mem.reset()
                filt = []
                it += 1
                self._record(it, mu, f, c, e0, 0.0, 0.0, rec, n_bt, resto=True)
                continue

            # accept
            x_old, g_old, J_old = x, g, J
            x = xt
            f, c = ft, ct
            lam = lam + alpha * dlam
            zl = zl + ad * dzl
            zu = zu + ad * dzu
            try:
                g = nlp.gradient(x)
                jvals = nlp.jacobian(x)
                J = nlp.jac_pattern.matrix(jvals)
            except DomainError as e:
                status, message, error = EVAL_ERROR, str(e), e
                break
            zl, zu = self.safeguard_z(x, zl, zu, mu)
            if self.lbfgs:
                s = x - x_old
                y = (g + J.T @ lam) - (g_old + J_old.T @ lam)
                self.mem.update(s, y)
            it += 1
            self._record(it, mu, f, c, e0, alpha, ad, rec, n_bt)
        return self._finish(status, x, lam, zl, zu, mu, it, message, error)

    def _alpha_min(self, theta, gphi, theta_min):
        ga, gt, gp = 0.05, 1e-5, 1e-8
        if gphi < 0:
            if theta <= theta_min:
                a = min(gt, gp * theta / -gphi, theta**1.1 / (-gphi) ** 2.3)
            else:
                a = min(gt, gp * theta / -gphi)
        else:
            a = gt
        return ga * a

    def _acceptable(self, theta, phi, gphi, thetat, phit, alpha, filt, theta_max, theta_min):
        """Filter test; returns ``(accepted, armijo_step)``."""
        # comparisons of barrier values allow for rounding in their evaluation
        slack = 10 * _EPS * max(1.0, abs(phi))
        if thetat > theta_max:
            return False, False
        for ft, fp in filt:
            if thetat >= ft and phit - fp >= slack:
                return False, False
        switching = gphi < 0 and alpha * (-gphi) ** 2.3 > theta**1.1
        if theta <= theta_min and switching:
            ok = phit - phi - 1e-4 * alpha * gphi <= slack
            return ok, True
        ok = thetat <= (1 - 1e-5) * theta or phit - phi + 1e-8 * theta <= slack
        return ok, False

    def _record(self, it, mu, f, c, e0, ap, ad, rec, n_bt, resto=False):
        nlp = self.nlp
        obj = f / nlp.obj_scale if hasattr(nlp, "obj_scale") else f
        if c.size and hasattr(nlp, "row_scale"):
            inf_pr = float(np.max(np.abs(c / nlp.row_scale)))
        else:
            inf_pr = float(np.max(np.abs(c))) if c.size else 0.0
        entry = {
            "iter": it,
            "mu": float(mu),
            "objective": float(obj),
            "inf_pr": inf_pr,
            "stationarity": e0["stationarity"],
            "complementarity": e0["complementarity"],
            "alpha_p": float(ap),
            "alpha_d": float(ad),
            "delta_h": float(rec["delta_h"]),
            "inertia_corrections": int(rec["corrections"]),
            "backtracks": int(n_bt),
            "restoration": bool(resto),
            "time": time.perf_counter() - self.t0,
        }
        self.log.append(entry)
        if self.o.verbose:
            print(
                "{:4d}{} {:+.6e} {:.2e} {:.2e} {:.1f} {:.2e} {:.2e} {:.2e} {:d}".format(
                    it, "r" if resto else " ", obj, inf_pr, e0["stationarity"], math.log10(mu),
                    rec["delta_h"], ap, ad, n_bt,
                )
            )

    def _finish(self, status, x, lam, zl, zu, mu, it, message, error):
        nlp = self.nlp
        try:
            kkt = _kkt_parts(nlp, self.b, x, lam, zl, zu, 0.0, self.o.s_max)
        except DomainError:
            kkt = {"stationarity": np.nan, "feasibility": np.nan, "complementarity": np.nan, "total": np.nan}
        iterate = IpmIterate(x.copy(), lam.copy(), zl.copy(), zu.copy(), mu, self.kkt.delta_last, 0.0, it)
        return iterate, status, kkt, message, error

    # ---- feasibility restoration

    def _restore(self, x, lam, zl, zu, mu, filt, c, f):
        nlp, o = self.nlp, self.o
        theta_r = float(np.abs(c).sum())
        phi_r = self.barrier(f, x, mu)
        outer_filter = list(filt) + [((1 - 1e-5) * theta_r, phi_r - 1e-8 * theta_r)]
        rho = 1000.0
        mu_r = max(mu, float(np.max(np.abs(c))) if c.size else mu)
        zeta = math.sqrt(mu_r)
        prob = _FeasibilityNlp(nlp, x, rho, zeta, mu_r)
        sub = StandardNlp(prob, scaling=False)
        n = nlp.n

        def stop(v, *_):
            xv = v[:n]
            try:
                ft, ct = self._eval_point(xv)
            except DomainError:
                return False
            th = float(np.abs(ct).sum())
            if th > 0.9 * theta_r:
                return False
            ph = self.barrier(ft, xv, mu)
            return all(th < a or ph < p for a, p in outer_filter)

        ropts = replace(o, mu_init=mu_r, max_iter=o.resto_max_iter, verbose=False, constr_viol_tol=None)
        inner = _Solver(sub, ropts, callback=stop, depth=self.depth + 1)
        zl0 = np.concatenate([np.where(self.b.has_l, np.minimum(zl, rho), 0.0), mu_r / prob.p0, mu_r / prob.n0])
        zu0 = np.concatenate([np.where(self.b.has_u, np.minimum(zu, rho), 0.0), np.zeros(2 * nlp.m)])
        warm = IpmIterate(prob.x_init, np.zeros(nlp.m), zl0, zu0, mu_r)
        it, status, _, message, _ = inner.run(warm=warm)
        self.kkt.n_factorizations += inner.kkt.n_factorizations
        if status == OPTIMAL and message == "stopped by callback":
            return it.x[:n].copy()
        return None


class _FeasibilityNlp:
    """Proximal l1 feasibility problem in the variables ``(x, p, n)``.

        min  rho * sum(p + n) + zeta/2 * |D_R (x - x_R)|^2
        s.t. c(x) - p + n = 0,  bounds on x,  p, n >= 0
    """

    def __init__(self, nlp, x_ref, rho, zeta, mu):
        self.nlp = nlp
        self.nx = nx = nlp.n
        m = nlp.m
        self.rho, self.zeta = rho, zeta
        self.x_ref = x_ref.copy()
        self.dr2 = np.minimum(1.0, 1.0 / np.maximum(np.abs(x_ref), 1e-300)) ** 2
        self.n = nx + 2 * m
        self.m = m
        self.x_lower = np.concatenate([nlp.x_lower, np.zeros(2 * m)])
        self.x_upper = np.concatenate([nlp.x_upper, np.full(2 * m, np.inf)])
        self.c_lower = self.c_upper = np.zeros(m)
        c = nlp.constraints(x_ref)
        a = (mu - rho * c) / (2 * rho)
        self.n0 = a + np.sqrt(a * a + mu * c / (2 * rho))
        self.p0 = c + self.n0
        self.x_init = np.concatenate([x_ref, self.p0, self.n0])
        ar = np.arange(m)
        self.jac_rows = np.concatenate([nlp.jac_rows, ar, ar])
        self.jac_cols = np.concatenate([nlp.jac_cols, nx + ar, nx + m + ar])
        if hasattr(nlp, "hess_rows"):
            d = np.arange(nx)
            self.hess_rows = np.concatenate([nlp.hess_rows, d])
            self.hess_cols = np.concatenate([nlp.hess_cols, d])
        self._ones = np.ones(m)

    def objective(self, v):
        x = v[: self.nx]
        return float(self.rho * v[self.nx :].sum() + 0.5 * self.zeta * np.sum(self.dr2 * (x - self.x_ref) ** 2))

    def gradient(self, v):
        x = v[: self.nx]
        return np.concatenate([self.zeta * self.dr2 * (x - self.x_ref), np.full(2 * self.m, self.rho)])

    def constraints(self, v):
        nx, m = self.nx, self.m
        return self.nlp.constraints(v[:nx]) - v[nx : nx + m] + v[nx + m :]

    def jacobian(self, v):
        return np.concatenate([self.nlp.jacobian(v[: self.nx]), -self._ones, self._ones])

    def hessian(self, v, lam, obj_factor):
        return np.concatenate([self.nlp.hessian(v[: self.nx], lam, 0.0), obj_factor * self.zeta * self.dr2])


# --------------------------------------------------------------------------
# public entry points


def solve(problem, options=None, x0=None, warm=None, scaling=None, **kw):
    """Solve a callback problem with the interior-point method.

    Parameters
    ----------
    problem : object or StandardNlp
        Callback problem with attributes ``n, m, x_lower, x_upper, c_lower,
        c_upper, x_init, jac_rows, jac_cols`` (and ``hess_rows, hess_cols``
        for exact Hessians) and methods ``objective, gradient, constraints,
        jacobian, hessian(x, lam, obj_factor)``.
    options : IpmOptions, optional
        Keyword arguments override individual fields.
    x0 : array_like, optional
        Primal start (defaults to ``problem.x_init``); pushed into the
        interior of the bounds.
    warm : IpmSolution or IpmIterate, optional
        Primal-dual start; no bound push, duals and barrier parameter kept.
        The scaling of the earlier solve is reused unless ``scaling`` is given.
    scaling : tuple or False, optional
        Explicit ``(obj_scale, row_scale)``; ``False`` disables scaling.

    Returns
    -------
    IpmSolution
    """
    opts = replace(options or IpmOptions(), **kw)
    it_warm = None
    if isinstance(warm, IpmSolution):
        if scaling is None:
            scaling = warm.scaling
        it_warm = warm.iterate
    elif warm is not None:
        it_warm = warm
    if isinstance(problem, StandardNlp):
        nlp = problem
    else:
        nlp = StandardNlp(
            problem, scaling=scaling, max_gradient=opts.max_gradient, x_init=x0, max_hessian=opts.max_hessian
        )
    if it_warm is not None and it_warm.x.size != nlp.n:
        raise ValueError("warm start does not match the problem size")
    solver = _Solver(nlp, opts)
    x_start = None
    if x0 is not None:
        x0 = np.asarray(x0, float)
        x_start = np.concatenate([x0, nlp.x_init[nlp.n_orig :]]) if x0.size == nlp.n_orig else x0
    iterate, status, kkt, message, error = solver.run(x0=x_start, warm=it_warm)
    x_full = iterate.x
    n0 = nlp.n_orig
    try:
        obj = nlp.problem.objective(x_full[:n0])
    except DomainError:
        obj = float("nan")
    return IpmSolution(
        status=status,
        x=x_full[:n0].copy(),
        lam=nlp.unscale_multipliers(iterate.lam),
        z_lower=iterate.zl[:n0] / nlp.obj_scale,
        z_upper=iterate.zu[:n0] / nlp.obj_scale,
        objective=float(obj),
        kkt=kkt,
        iterations=iterate.iteration,
        log=solver.log,
        iterate=iterate,
        scaling=nlp.scaling,
        message=message,
        n_factorizations=solver.kkt.n_factorizations,
        error=error,
    )


def assemble_and_solve_step(nlp, iterate, hessian_mode="exact", memory=None, options=None):
    """One Newton step of the primal-dual system at ``iterate``.

    Parameters
    ----------
    nlp : StandardNlp
    iterate : IpmIterate
    hessian_mode : {"exact", "lbfgs"}
    memory : LbfgsMemory, optional
        Curvature pairs for L-BFGS mode.

    Returns
    -------
    dx, dlam, dzl, dzu : ndarray
    record : dict
        ``delta_h``, ``delta_c`` and the number of inertia corrections.
    """
    opts = replace(options or IpmOptions(), hessian_mode=hessian_mode)
    s = _Solver(nlp, opts)
    if memory is not None:
        s.mem = memory
    x = iterate.x
    g = nlp.gradient(x)
    jvals = nlp.jacobian(x)
    J = nlp.jac_pattern.matrix(jvals)
    c = nlp.constraints(x)
    dx, dlam, dzl, dzu, rec = s.direction(x, iterate.lam, iterate.zl, iterate.zu, iterate.mu, g, J, jvals, c)
    rec.pop("factor")
    return dx, dlam, dzl, dzu, rec
