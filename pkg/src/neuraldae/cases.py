"""Shipped case studies: tank manifold, predator-prey with a Lyapunov state, fed-batch reactor.

Every builder returns a :class:`~neuraldae.ocp.ContinuousModel` whose closure
outputs ``z`` are the terms a network has to learn.  With ``mode="truth"``
the model also carries the true closures as ``closure_eqs`` so that it can be
simulated; with ``mode="neural"`` they are left out.  Both variants share
the same states, algebraics and equations otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentInitialState, InvalidConfig, NonpositiveVolume
from .expr import log, sqrt
from .ocp import ModelBuilder, Param, State, Variable

__all__ = [
    "FedbatchParams",
    "PopulationParams",
    "TankParams",
    "build_fedbatch",
    "build_population",
    "build_tank",
    "lyapunov",
    "lyapunov_rate",
    "monod",
    "tank_volume",
]

INF = math.inf


def _check_mode(mode):
    if mode not in ("truth", "neural"):
        raise InvalidConfig(f"mode must be 'truth' or 'neural', got {mode!r}")


def _as_rows(x0s, n):
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[1] != n:
        raise InvalidConfig(f"initial states need {n} entries, got {x0s.shape[1]}")
    return x0s


# --------------------------------------------------------------------------
# tank manifold


@dataclass(frozen=True)
class TankParams:
    """Tank manifold parameters.

    ``profiles`` selects the area-height functions: ``"train"`` uses the
    constant areas ``(0.1, 0.5, 2, 10)``; ``"eval"`` uses
    ``(sqrt(x0 + 0.1), 0.1, x2 + 0.1, 10)``.
    """

    alpha1: float = 0.5
    alpha2: float = 0.5
    pump: float = 0.1
    profiles: str = "train"

    def __post_init__(self):
        if self.profiles not in ("train", "eval"):
            raise InvalidConfig(f"unknown tank profiles {self.profiles!r}")
        if self.alpha1 <= 0 or self.alpha2 <= 0 or self.pump <= 0:
            raise InvalidConfig("tank coefficients must be positive")

    def areas(self, x):
        """Area-height profiles for symbols or arrays ``x = (x0, x1, x2, x3)``."""
        if self.profiles == "train":
            return (0.1, 0.5, 2.0, 10.0)
        return (sqrt(x[0] + 0.1), 0.1, x[2] + 0.1, 10.0)


def _area_integral(params, i, h):
    h = np.asarray(h, dtype=float)
    if params.profiles == "train":
        return params.areas(None)[i] * h
    if i == 0:
        return (2.0 / 3.0) * ((h + 0.1) ** 1.5 - 0.1**1.5)
    if i == 2:
        return 0.5 * h**2 + 0.1 * h
    return {1: 0.1, 3: 10.0}[i] * h


def tank_volume(params, x):
    """Total fluid volume for states ``x`` of shape ``(..., 4)``."""
    x = np.asarray(x, dtype=float)
    return sum(_area_integral(params, i, x[..., i]) for i in range(4))


def build_tank(x0s, horizon=(0.0, 10.0), params=None, mode="neural"):
    """Four connected tanks with a pump and a level-equality constraint.

    States are the levels ``x0..x3``; algebraics the flows ``y1, y2, y4``;
    closures the pump flow ``y0`` and the outflow ``y3`` of tank 0.  The
    level equality ``x1 = x2`` enters through its time derivative
    ``y2 / phi1 = (y3 - y4) / phi2``, so every initial state must satisfy
    ``x1 = x2``.

    Parameters
    ----------
    x0s : array_like, shape (n_traj, 4)
    horizon : tuple
    params : TankParams, optional
    mode : {"neural", "truth"}
    """
    _check_mode(mode)
    params = params or TankParams()
    x0s = _as_rows(x0s, 4)
    bad = np.abs(x0s[:, 1] - x0s[:, 2]) > 1e-12 * np.maximum(1.0, np.abs(x0s[:, 1]))
    if np.any(bad):
        raise InconsistentInitialState(f"x1(0) must equal x2(0) (trajectories {np.flatnonzero(bad).tolist()})")
    if np.any(x0s < 0):
        raise InvalidConfig("tank levels must be nonnegative")
    states = [State(f"x{i}", tuple(x0s[:, i]), lower=0.0) for i in range(4)]
    algebraics = [Variable("y1", lower=0.0), Variable("y2"), Variable("y4", lower=0.0)]
    closures = [Variable("y0", lower=0.0), Variable("y3", lower=0.0)]
    b = ModelBuilder(states, algebraics, closures)
    x = [b[f"x{i}"] for i in range(4)]
    y0, y1, y2, y3, y4 = b["y0"], b["y1"], b["y2"], b["y3"], b["y4"]
    phi = params.areas(x)
    dynamics = [(y1 - y3) / phi[0], y2 / phi[1], (y3 - y4) / phi[2], (y4 - y0) / phi[3]]
    algebraic = [y2 / phi[1] - (y3 - y4) / phi[2], y0 - y1 - y2, y4 - params.alpha2 * sqrt(x[2])]
    closure_eqs = None
    if mode == "truth":
        closure_eqs = [params.pump * x[0] * x[3], params.alpha1 * sqrt(x[0])]
    return b.build(
        dynamics,
        horizon,
        algebraic=algebraic,
        closure_eqs=closure_eqs,
        network_inputs=["x0", "x1", "x2", "x3"],
        name="tank",
    )


def tank_closures(params, x):
    """True ``(y0, y3)`` for levels ``x`` of shape ``(..., 4)``."""
    x = np.asarray(x, dtype=float)
    return np.stack([params.pump * x[..., 0] * x[..., 3], params.alpha1 * np.sqrt(x[..., 0])], axis=-1)


# --------------------------------------------------------------------------
# predator-prey


@dataclass(frozen=True)
class PopulationParams:
    r1: float = 0.2
    a1: float = 0.2
    b1: float = 0.1
    r2: float = 0.2
    a2: float = 0.01
    x_min: float = 1e-3

    def __post_init__(self):
        if min(self.r1, self.a1, self.b1, self.r2, self.a2) <= 0:
            raise InvalidConfig("population parameters must be positive")

    @property
    def fixed_point(self):
        den = self.a1 * self.r2 + self.a2 * self.b1
        return self.r1 * self.a2 / den, self.r1 * self.r2 / den


def lyapunov(params, x0, x1):
    """Lyapunov function of the predator-prey system (arrays or symbols)."""
    s0, s1 = params.fixed_point
    c = params.a1 * s0 / params.a2
    if isinstance(x0, (float, int, np.ndarray)):
        return np.log(x0 / s0) + s0 / x0 + c * (np.log(x1 / s1) + s1 / x1)
    return log(x0 / s0) + s0 / x0 + c * (log(x1 / s1) + s1 / x1)


def lyapunov_rate(params, x0, x1, z):
    """Time derivative of :func:`lyapunov` along the model with closure ``z``."""
    s0, s1 = params.fixed_point
    c = params.a1 * s0 / params.a2
    dx0 = (params.r1 - params.a1 * x1 - params.b1 * x0) * x0
    return (1.0 / x0 - s0 / x0**2) * dx0 + c * (1.0 / x1 - s1 / x1**2) * z * x1


def population_closure(params, x):
    x = np.asarray(x, dtype=float)
    return params.r2 - params.a2 * x[..., 1] / x[..., 0]


def build_population(x0s, horizon=(0.0, 30.0), params=None, mode="neural", with_lyapunov=False):
    """Predator-prey model with the predator growth rate as closure.

    With ``with_lyapunov`` the Lyapunov function ``V`` becomes a third state
    whose derivative is expanded by the chain rule, and ``dV/dt <= 0`` is
    imposed as a path constraint.  The network sees the two populations.

    Parameters
    ----------
    x0s : array_like, shape (n_traj, 2)
        Initial prey and predator populations.
    """
    _check_mode(mode)
    params = params or PopulationParams()
    x0s = _as_rows(x0s, 2)
    if np.any(x0s <= params.x_min):
        raise InvalidConfig(f"populations must start above {params.x_min}")
    states = [
        State("x0", tuple(x0s[:, 0]), lower=params.x_min),
        State("x1", tuple(x0s[:, 1]), lower=params.x_min),
    ]
    if with_lyapunov:
        v0 = lyapunov(params, x0s[:, 0], x0s[:, 1])
        states.append(State("V", tuple(v0)))
    b = ModelBuilder(states, closures=[Variable("z")])
    x0, x1, z = b["x0"], b["x1"], b["z"]
    p = params
    dx0 = (p.r1 - p.a1 * x1 - p.b1 * x0) * x0
    dx1 = z * x1
    dynamics = [dx0, dx1]
    path = ()
    if with_lyapunov:
        dV = lyapunov_rate(p, x0, x1, z)
        dynamics.append(dV)
        path = [dV]
    closure_eqs = [p.r2 - p.a2 * x1 / x0] if mode == "truth" else None
    return b.build(
        dynamics,
        horizon,
        path=path,
        closure_eqs=closure_eqs,
        network_inputs=["x0", "x1"],
        name="population",
    )


# --------------------------------------------------------------------------
# fed-batch reactor


@dataclass(frozen=True)
class FedbatchParams:
    mu_max: float = 0.2
    K_S: float = 1.0
    Y_XS: float = 0.5
    Y_PX: float = 0.2
    S_f: float = 10.0
    F: float = 0.05

    def __post_init__(self):
        if min(self.mu_max, self.K_S, self.Y_XS, self.Y_PX, self.S_f) <= 0 or self.F < 0:
            raise InvalidConfig("fed-batch parameters must be positive (feed nonnegative)")


def monod(params, S):
    """Monod specific growth rate."""
    S = np.asarray(S, dtype=float)
    return params.mu_max * S / (params.K_S + S)


def build_fedbatch(x0s, horizon=(0.0, 20.0), params=None, mode="neural"):
    """Fed-batch reactor with the specific growth rate as closure.

    States ``(X, P, S, V)`` are nonnegative; the feed is constant.  The
    network sees all four states.

    Parameters
    ----------
    x0s : array_like, shape (n_traj, 4)
    """
    _check_mode(mode)
    params = params or FedbatchParams()
    x0s = _as_rows(x0s, 4)
    if np.any(x0s[:, 3] <= 0):
        raise NonpositiveVolume("initial volume must be positive")
    if np.any(x0s < 0):
        raise InvalidConfig("concentrations must be nonnegative")
    names = ("X", "P", "S", "V")
    states = [State(n, tuple(x0s[:, i]), lower=0.0) for i, n in enumerate(names)]
    b = ModelBuilder(states, closures=[Variable("mu")], params=[Param("F", params.F)])
    X, P, S, V, mu, F = (b[n] for n in ("X", "P", "S", "V", "mu", "F"))
    p = params
    rg = mu * X
    dynamics = [
        -F / V * X + rg,
        -F / V * P + p.Y_PX * rg,
        F / V * (p.S_f - S) - rg / p.Y_XS,
        F,
    ]
    closure_eqs = [p.mu_max * S / (p.K_S + S)] if mode == "truth" else None
    return b.build(dynamics, horizon, closure_eqs=closure_eqs, network_inputs=list(names), name="fedbatch")
