"""Ground-truth simulation and synthetic observations.

The truth is the collocation solution of a model whose closures are all
known.  Elements are solved one after another: the states at the start of
element ``i`` are fixed by continuity, and the collocation, algebraic and
closure rows of that element (for all trajectories at once) form a small
square system solved by damped Newton.  The result is verified by repeating
the march on a mesh twice as fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .colloc import CollocationScheme, transcribe
from .errors import InvalidConfig, OutOfHorizon, SolverFailure
from .expr import DomainError
from .ocp import ObservationSet

__all__ = ["GroundTruth", "NonConverged", "make_observations", "march", "simulate_truth"]


class NonConverged(SolverFailure):
    """Newton failed on an element or the mesh-doubling check did not pass."""

    def __init__(self, message):
        super().__init__(message, "NonConverged")


@dataclass
class GroundTruth:
    """Collocation solution of a closure-known model."""

    model: object
    transcription: object
    w: np.ndarray
    refinement_error: float

    @property
    def scheme(self):
        return self.transcription.scheme

    def interpolate(self, traj, t):
        """``(x, y, z)`` at times ``t`` of trajectory ``traj``."""
        return self.transcription.interpolate(self.w, traj, t)

    def states(self, traj, t):
        return self.interpolate(traj, t)[0]

    def boundary_states(self):
        """States at the element boundaries, shape ``(n_traj, n_fe + 1, n_x)``."""
        X = self.transcription.unpack(self.w)[0]
        return np.concatenate([X[:, :1, 0, :], X[:, :, -1, :]], axis=1)


def _element_system(tr, i):
    R, K = tr.n_traj, tr.scheme.K
    rows = [tr.coll_rows[:, i].ravel()]
    cols = [tr.xi[:, i, 1:].ravel()]
    if tr.alg_rows is not None:
        rows.append(tr.alg_rows[:, i].ravel())
        cols.append(tr.yi[:, i].ravel())
    if tr.clo_rows is not None:
        rows.append(tr.clo_rows[:, i].ravel())
        cols.append(tr.zi[:, i].ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    if rows.size != cols.size:
        raise InvalidConfig("element system is not square")
    return rows, cols


def march(tr, w=None, tol=1e-12, max_newton=50):
    """Solve the square collocation system element by element.

    Parameters
    ----------
    tr : Transcription
        Built with ``mode="known"`` (or with fixed networks).
    w : ndarray, optional
        Starting point; defaults to the transcription's guess.

    Returns
    -------
    ndarray
        Solution vector.
    """
    w = tr.x_init.copy() if w is None else np.array(w, dtype=float)
    pattern = tr.jac_rows, tr.jac_cols
    K = tr.scheme.K
    R = tr.n_traj
    for r in range(R):
        w[tr.xi[r, 0, 0]] = tr.model.x0(r)
    for i in range(tr.scheme.n_fe):
        if i > 0:
            w[tr.xi[:, i, 0]] = w[tr.xi[:, i - 1, K]]
        # start the element from its left end state
        for k in range(1, K + 1):
            w[tr.xi[:, i, k]] = w[tr.xi[:, i, 0]]
        if i > 0:
            w[tr.yi[:, i]] = w[tr.yi[:, i - 1, K - 1 : K]]
            w[tr.zi[:, i]] = w[tr.zi[:, i - 1, K - 1 : K]]
        rows, cols = _element_system(tr, i)
        rmap = np.full(tr.m, -1)
        rmap[rows] = np.arange(rows.size)
        cmap = np.full(tr.n, -1)
        cmap[cols] = np.arange(cols.size)
        sel = (rmap[pattern[0]] >= 0) & (cmap[pattern[1]] >= 0)
        jr, jc = rmap[pattern[0][sel]], cmap[pattern[1][sel]]
        w = _newton(tr, w, rows, cols, sel, jr, jc, tol, max_newton, i)
    return w


def _newton(tr, w, rows, cols, sel, jr, jc, tol, max_newton, elem):
    n = cols.size
    lo, hi = tr.x_lower[cols], tr.x_upper[cols]

    def resid(v):
        return tr.constraints(v)[rows]

    try:
        r = resid(w)
    except DomainError as e:
        raise NonConverged(f"element {elem}: evaluation failed at the start ({e})") from e
    for _ in range(max_newton):
        if np.max(np.abs(r)) <= tol:
            return w
        J = np.zeros((n, n))
        np.add.at(J, (jr, jc), tr.jacobian(w)[sel])
        try:
            d = sla.lu_solve(sla.lu_factor(J, check_finite=False), -r)
        except (ValueError, sla.LinAlgError) as e:
            raise NonConverged(f"element {elem}: singular Newton matrix") from e
        if not np.all(np.isfinite(d)):
            raise NonConverged(f"element {elem}: singular Newton matrix")
        a = 1.0
        nr = np.linalg.norm(r)
        while a > 1e-8:
            v = w.copy()
            v[cols] = v[cols] + a * d
            # bounded variables stay feasible (sqrt and log arguments)
            if np.any(v[cols] < lo - 1e-14) or np.any(v[cols] > hi + 1e-14):
                a *= 0.5
                continue
            try:
                rt = resid(v)
            except DomainError:
                a *= 0.5
                continue
            if np.all(np.isfinite(rt)) and np.linalg.norm(rt) < (1 - 1e-4 * a) * nr:
                break
            a *= 0.5
        else:
            if np.max(np.abs(r)) <= 1e3 * tol:
                return w
            raise NonConverged(f"element {elem}: line search failed (residual {np.max(np.abs(r)):.2e})")
        w, r = v, rt
    if np.max(np.abs(r)) <= tol:
        return w
    raise NonConverged(f"element {elem}: Newton did not converge (residual {np.max(np.abs(r)):.2e})")


def simulate_truth(model, n_fe, K=3, check_tol=1e-7, max_doublings=3, tol=1e-12):
    """Simulate a closure-known model and verify it by mesh doubling.

    The march on ``n_fe`` elements is compared with the march on ``2 n_fe``
    elements at the coarse element boundaries.  While the largest state
    difference exceeds ``check_tol`` the mesh is doubled again (at most
    ``max_doublings`` times).  The finer of the last pair is returned.

    Raises
    ------
    NonConverged
        When Newton fails or the doubling check does not pass.
    """
    horizon = model.horizon
    prev = None
    n = int(n_fe)
    for _ in range(max_doublings + 1):
        tr = transcribe(model, CollocationScheme(n, K, horizon), mode="known")
        w = march(tr, tol=tol)
        truth = GroundTruth(model, tr, w, np.inf)
        if prev is not None:
            coarse = prev.boundary_states()
            fine = truth.boundary_states()[:, ::2]
            err = float(np.max(np.abs(coarse - fine)))
            truth.refinement_error = err
            if err <= check_tol:
                return truth
        prev = truth
        n *= 2
    raise NonConverged(f"mesh doubling changed the states by {truth.refinement_error:.2e} > {check_tol:g}")


def make_observations(truth, times, states, sigma=0.02, seed=0, relative=True):
    """Noisy state observations of a simulated truth.

    Parameters
    ----------
    truth : GroundTruth
    times : array_like
        Observation times, used for every trajectory.
    states : sequence of int or str
        Observed states.
    sigma : float
        Noise standard deviation; with ``relative`` it is a fraction of each
        observed state's range over its trajectory.
    seed : int
        Seed of the normal generator.  Draws are taken trajectory by
        trajectory, state by state, time by time.

    Returns
    -------
    ObservationSet
    """
    model = truth.model
    times = np.asarray(times, dtype=float).ravel()
    t0, tf = model.horizon
    if times.size and (times.min() < t0 - 1e-12 or times.max() > tf + 1e-12):
        raise OutOfHorizon("observation time outside the horizon")
    idx = [model.state_index(s) if isinstance(s, str) else int(s) for s in states]
    rng = np.random.default_rng(seed)
    grid = np.linspace(t0, tf, 401)
    traj, st, tt, vals = [], [], [], []
    sig = {}
    for r in range(model.n_traj):
        xs = truth.states(r, times)
        xg = truth.states(r, grid)
        for d in idx:
            s = sigma * float(np.ptp(xg[:, d])) if relative else float(sigma)
            sig[(r, d)] = s
            noise = rng.standard_normal(times.size) * s
            traj.append(np.full(times.size, r))
            st.append(np.full(times.size, d))
            tt.append(times)
            vals.append(xs[:, d] + noise)
    return ObservationSet(np.concatenate(traj), np.concatenate(st), np.concatenate(tt), np.concatenate(vals), sig, seed)
