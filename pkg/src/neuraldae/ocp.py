"""Continuous-time hybrid DAE models, observations and loss settings.

A model is described over a local symbol vector ordered as

    [x (states), y (algebraics), z (closure outputs), p (static parameters), t]

Dynamics ``dx/dt = f``, algebraic residuals ``h = 0``, path inequalities
``g <= 0`` and (for simulation with known closures) closure residuals
``z - c = 0`` are :class:`~neuraldae.expr.ExprFunction` objects over that
vector.  :class:`ModelBuilder` hands out named symbols and assembles a
validated :class:`ContinuousModel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyHorizon,
    IndexOutOfRange,
    TimeOutOfHorizon,
    UnknownSymbol,
)
from .expr import ExprFunction, Graph

__all__ = [
    "ContinuousModel",
    "LossSpec",
    "ModelBuilder",
    "ObservationSet",
    "Param",
    "State",
    "Variable",
]

INF = math.inf


@dataclass(frozen=True)
class State:
    name: str
    x0: tuple  # one initial value per trajectory
    lower: float = -INF
    upper: float = INF


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float = -INF
    upper: float = INF


@dataclass(frozen=True)
class Param:
    name: str
    value: float
    free: bool = False
    lower: float = -INF
    upper: float = INF


def _finite_or_none(v):
    return None if math.isinf(v) else float(v)


def _from_json_bound(v, default):
    return default if v is None else float(v)


@dataclass
class ContinuousModel:
    """Validated hybrid DAE model.

    Attributes
    ----------
    states, algebraics, closures, params : list
        Symbol declarations in local-vector order.
    horizon : tuple of float
        ``(t0, tf)``.
    dynamics : ExprFunction
        ``n_x`` outputs.
    algebraic : ExprFunction or None
        ``n_y`` residuals.
    path : ExprFunction or None
        Path inequalities ``g <= 0``.
    closure_eqs : ExprFunction or None
        Known closure values ``c``; used when simulating with ``z = c``.
    network_inputs : tuple of int
        Local indices (states or algebraics) fed to the network.
    """

    states: list
    algebraics: list
    closures: list
    params: list
    horizon: tuple
    dynamics: ExprFunction
    algebraic: ExprFunction | None = None
    path: ExprFunction | None = None
    closure_eqs: ExprFunction | None = None
    network_inputs: tuple = ()
    name: str = "model"

    def __post_init__(self):
        t0, tf = (float(v) for v in self.horizon)
        if not tf > t0:
            raise EmptyHorizon(f"horizon [{t0}, {tf}] is empty")
        self.horizon = (t0, tf)
        n_loc = self.n_local
        for fn, what, n_expected in (
            (self.dynamics, "dynamics", self.n_x),
            (self.algebraic, "algebraic equations", self.n_y),
            (self.closure_eqs, "closure equations", self.n_z),
        ):
            if fn is None:
                if what == "dynamics":
                    raise DimensionMismatch("dynamics are required")
                if what == "algebraic equations" and self.n_y:
                    raise DimensionMismatch(f"{self.n_y} algebraic variables but no equations")
                continue
            if fn.n_vars != n_loc:
                raise DimensionMismatch(f"{what} use {fn.n_vars} symbols, expected {n_loc}")
            if fn.n_out != n_expected:
                raise DimensionMismatch(f"{fn.n_out} {what} for {n_expected} unknowns")
        if self.path is not None and self.path.n_vars != n_loc:
            raise DimensionMismatch("path inequalities use the wrong symbol count")
        if not self.network_inputs:
            self.network_inputs = tuple(range(self.n_x))
        self.network_inputs = tuple(int(i) for i in self.network_inputs)
        for i in self.network_inputs:
            if not 0 <= i < self.n_x + self.n_y:
                raise IndexOutOfRange(f"network input {i} is not a state or algebraic")
        counts = {len(s.x0) for s in self.states}
        if len(counts) != 1:
            raise DimensionMismatch("every state needs the same number of initial values")
        if self.n_traj < 1:
            raise DimensionMismatch("at least one trajectory is required")
        names = self.symbol_names()
        if len(set(names)) != len(names):
            raise DimensionMismatch("symbol names must be unique")

    # sizes -------------------------------------------------------------
    @property
    def n_x(self):
        return len(self.states)

    @property
    def n_y(self):
        return len(self.algebraics)

    @property
    def n_z(self):
        return len(self.closures)

    @property
    def n_p(self):
        return len(self.params)

    @property
    def n_local(self):
        return self.n_x + self.n_y + self.n_z + self.n_p + 1

    @property
    def n_traj(self):
        return len(self.states[0].x0)

    @property
    def n_path(self):
        return 0 if self.path is None else self.path.n_out

    def symbol_names(self):
        return (
            [s.name for s in self.states]
            + [v.name for v in self.algebraics]
            + [v.name for v in self.closures]
            + [p.name for p in self.params]
        )

    def state_index(self, name):
        for i, s in enumerate(self.states):
            if s.name == name:
                return i
        raise UnknownSymbol(f"no state named {name!r}")

    def x0(self, traj):
        if not 0 <= traj < self.n_traj:
            raise IndexOutOfRange(f"trajectory {traj} outside [0, {self.n_traj})")
        return np.array([s.x0[traj] for s in self.states])

    def param_values(self):
        return np.array([p.value for p in self.params], dtype=float)

    def with_initial_states(self, x0s):
        """Copy of the model with new initial states, one row per trajectory."""
        x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
        if x0s.shape[1] != self.n_x:
            raise DimensionMismatch(f"initial states need {self.n_x} columns")
        states = [replace(s, x0=tuple(x0s[:, i].tolist())) for i, s in enumerate(self.states)]
        return replace(self, states=states)

    def with_horizon(self, horizon):
        return replace(self, horizon=tuple(horizon))

    def without_path(self):
        return replace(self, path=None)

    # serialization -----------------------------------------------------
    def to_dict(self):
        def fn(f):
            return None if f is None else f.to_dict()

        return {
            "name": self.name,
            "states": [
                {"name": s.name, "x0": list(s.x0), "lower": _finite_or_none(s.lower), "upper": _finite_or_none(s.upper)}
                for s in self.states
            ],
            "algebraics": [
                {"name": v.name, "lower": _finite_or_none(v.lower), "upper": _finite_or_none(v.upper)}
                for v in self.algebraics
            ],
            "closures": [
                {"name": v.name, "lower": _finite_or_none(v.lower), "upper": _finite_or_none(v.upper)}
                for v in self.closures
            ],
            "params": [
                {"name": p.name, "value": p.value, "free": p.free, "lower": _finite_or_none(p.lower), "upper": _finite_or_none(p.upper)}
                for p in self.params
            ],
            "horizon": list(self.horizon),
            "dynamics": fn(self.dynamics),
            "algebraic": fn(self.algebraic),
            "path": fn(self.path),
            "closure_eqs": fn(self.closure_eqs),
            "network_inputs": list(self.network_inputs),
        }

    @classmethod
    def from_dict(cls, d):
        def fn(v):
            return None if v is None else ExprFunction.from_dict(v)

        def var(v):
            return Variable(v["name"], _from_json_bound(v["lower"], -INF), _from_json_bound(v["upper"], INF))

        return cls(
            states=[
                State(s["name"], tuple(s["x0"]), _from_json_bound(s["lower"], -INF), _from_json_bound(s["upper"], INF))
                for s in d["states"]
            ],
            algebraics=[var(v) for v in d["algebraics"]],
            closures=[var(v) for v in d["closures"]],
            params=[
                Param(p["name"], p["value"], p["free"], _from_json_bound(p["lower"], -INF), _from_json_bound(p["upper"], INF))
                for p in d["params"]
            ],
            horizon=tuple(d["horizon"]),
            dynamics=fn(d["dynamics"]),
            algebraic=fn(d["algebraic"]),
            path=fn(d["path"]),
            closure_eqs=fn(d["closure_eqs"]),
            network_inputs=tuple(d["network_inputs"]),
            name=d.get("name", "model"),
        )


class ModelBuilder:
    """Hand out named symbols and assemble a :class:`ContinuousModel`.

    Examples
    --------
    >>> b = ModelBuilder(states=[State("x", (1.0,))])
    >>> x = b["x"]
    >>> m = b.build(dynamics=[-x], horizon=(0.0, 1.0))
    >>> m.n_x
    1
    """

    def __init__(self, states, algebraics=(), closures=(), params=()):
        self.states = list(states)
        self.algebraics = list(algebraics)
        self.closures = list(closures)
        self.params = list(params)
        names = [s.name for s in self.states + self.algebraics + self.closures + self.params]
        self.graph = Graph(len(names) + 1)
        self._sym = {n: self.graph.var(i) for i, n in enumerate(names)}
        self.t = self.graph.var(len(names))
        self._index = {n: i for i, n in enumerate(names)}

    def __getitem__(self, name):
        try:
            return self._sym[name]
        except KeyError:
            raise UnknownSymbol(f"unknown symbol {name!r}") from None

    def index(self, name):
        if name not in self._index:
            raise UnknownSymbol(f"unknown symbol {name!r}")
        return self._index[name]

    def build(self, dynamics, horizon, algebraic=(), path=(), closure_eqs=None, network_inputs=None, name="model"):
        def fn(outs):
            outs = list(outs)
            if not outs:
                return None
            return ExprFunction(outs, n_vars=self.graph.n_vars, graph=self.graph)

        if len(dynamics) != len(self.states):
            raise DimensionMismatch(f"{len(dynamics)} right-hand sides for {len(self.states)} states")
        inputs = None
        if network_inputs is not None:
            inputs = tuple(self.index(n) for n in network_inputs)
        return ContinuousModel(
            states=self.states,
            algebraics=self.algebraics,
            closures=self.closures,
            params=self.params,
            horizon=tuple(horizon),
            dynamics=fn(dynamics),
            algebraic=fn(algebraic),
            path=fn(path),
            closure_eqs=None if closure_eqs is None else fn(closure_eqs),
            network_inputs=inputs or (),
            name=name,
        )


@dataclass
class ObservationSet:
    """Scalar state observations.

    Attributes
    ----------
    traj, state : ndarray of int
        Trajectory and state index of each observation.
    t, value : ndarray of float
    sigma : dict
        Noise standard deviation used for each ``(traj, state)`` pair.
    seed : int or None
        Seed of the noise generator.
    """

    traj: np.ndarray
    state: np.ndarray
    t: np.ndarray
    value: np.ndarray
    sigma: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.traj = np.asarray(self.traj, dtype=np.int64).ravel()
        self.state = np.asarray(self.state, dtype=np.int64).ravel()
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.value = np.asarray(self.value, dtype=float).ravel()
        n = self.t.size
        if not (self.traj.size == self.state.size == self.value.size == n):
            raise DimensionMismatch("observation arrays differ in length")

    def __len__(self):
        return self.t.size

    def validate(self, model):
        if len(self) == 0:
            return self
        if self.traj.min() < 0 or self.traj.max() >= model.n_traj:
            raise IndexOutOfRange("observation references a missing trajectory")
        if self.state.min() < 0 or self.state.max() >= model.n_x:
            raise IndexOutOfRange("observation references a missing state")
        t0, tf = model.horizon
        tol = 1e-12 * max(1.0, abs(tf - t0))
        if self.t.min() < t0 - tol or self.t.max() > tf + tol:
            raise TimeOutOfHorizon("observation time outside the model horizon")
        return self

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return ObservationSet(self.traj[mask], self.state[mask], self.t[mask], self.value[mask], dict(self.sigma), self.seed)

    def noise_variance_sum(self):
        """Sum over observations of the injected noise variance."""
        total = 0.0
        for r, d in zip(self.traj, self.state):
            total += self.sigma.get((int(r), int(d)), 0.0) ** 2
        return total

    def to_rows(self, state_names):
        return [
            (int(r), float(t), state_names[int(d)], float(v))
            for r, d, t, v in zip(self.traj, self.state, self.t, self.value)
        ]


@dataclass(frozen=True)
class LossSpec:
    """Weights of the regularization and smoothing terms."""

    lambda_r: float = 0.0
    lambda_s: float = 0.0
