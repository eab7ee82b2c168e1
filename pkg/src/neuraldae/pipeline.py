"""Four-stage training of neural DAE models and fixed-network evaluation.

Stages
------
1. Smooth initialization: the collocation problem without networks, the
   closure outputs free and penalized by the squared derivative of their
   interpolating polynomials.
2. Pretraining of the network weights on the Step-1 closure values at the
   collocation points, after fixing the input and output normalization.
3. The full problem with embedded networks, solved with the L-BFGS Hessian
   to a loose tolerance.
4. The same problem with the exact Hessian to a tight tolerance, warm
   started from the Step-3 primal-dual point.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .colloc import CollocationScheme, NetworkSlot, transcribe
from .errors import EmptySample, InvalidConfig, SolverFailure
from .ipm import IpmOptions, solve
from .mlp import MlpSpec, compute_normalization, init_params, pretrain
from .ocp import LossSpec
from .sim import NonConverged, march

__all__ = [
    "Evaluation",
    "FrozenNetwork",
    "PipelineConfig",
    "StageFailure",
    "TRIALS",
    "TrainedModel",
    "evaluate",
    "observation_mse",
    "smooth_init",
    "train",
    "trial_config",
]

STAGES = ("step1", "step2", "step3", "step4")
# cap on the scaled objective curvature for the smooth-initialization solve
SMOOTH_MAX_HESSIAN = 1e6


@dataclass(frozen=True)
class PipelineConfig:
    """Hyperparameters of the training pipeline.

    Parameters
    ----------
    n_fe, K : int
        Finite elements and collocation points per element.
    lambda_s : float
        Smoothing weight of the Step-1 problem.
    lambda_r : float
        Weight of the squared-norm penalty on the network parameters.
    n_init : int
        Pretraining gradient steps.
    lr : float
        Pretraining step size.
    eps1, eps2 : float
        Tolerances of Steps 3 and 4.
    lbfgs_memory : int
        Number of stored curvature pairs.
    seed : int
        Seed of the weight initialization.
    skip_pretrain, skip_lbfgs, skip_refinement : bool
        Leave out Step 2, 3 or 4.
    max_iter : int
        Iteration limit of every solve.
    """

    n_fe: int = 20
    K: int = 2
    lambda_s: float = 1.0
    lambda_r: float = 1.0
    n_init: int = 1000
    lr: float = 1e-2
    eps1: float = 1e-3
    eps2: float = 1e-6
    lbfgs_memory: int = 6
    seed: int = 0
    skip_pretrain: bool = False
    skip_lbfgs: bool = False
    skip_refinement: bool = False
    max_iter: int = 3000

    def __post_init__(self):
        if self.n_fe < 1:
            raise InvalidConfig("n_fe must be positive")
        for name in ("lambda_s", "lambda_r", "lr", "eps1", "eps2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidConfig(f"{name} must be finite and nonnegative")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise InvalidConfig("tolerances must be positive")
        if self.eps2 > self.eps1:
            raise InvalidConfig("eps2 must not exceed eps1")
        if self.n_init < 0 or self.lbfgs_memory < 1 or self.max_iter < 1:
            raise InvalidConfig("n_init, lbfgs_memory and max_iter must be nonnegative counts")
        if self.skip_lbfgs and self.skip_refinement:
            raise InvalidConfig("at least one of Steps 3 and 4 must run")

    def scheme(self, horizon):
        return CollocationScheme(self.n_fe, self.K, horizon)

    def to_dict(self):
        return asdict(self)


# ablation trials: (skip_pretrain, skip_lbfgs, skip_refinement, eps1 override)
TRIALS = {
    "0": (False, False, False, None),
    "A": (True, False, False, None),
    "B": (False, False, True, None),
    "C": (True, False, True, 1e-6),
    "D": (False, True, False, None),
}


def trial_config(config, trial):
    """Copy of ``config`` set up for one of the ablation trials."""
    try:
        sp, sl, sr, eps1 = TRIALS[str(trial)]
    except KeyError:
        raise InvalidConfig(f"unknown trial {trial!r}") from None
    kw = dict(skip_pretrain=sp, skip_lbfgs=sl, skip_refinement=sr)
    if eps1 is not None:
        kw["eps1"] = eps1
        kw["eps2"] = min(config.eps2, eps1)
    return replace(config, **kw)


class StageFailure(SolverFailure):
    """A pipeline stage did not finish; ``partial`` holds the results so far."""

    def __init__(self, stage, status, message, partial=None):
        super().__init__(f"{stage}: {message}", status)
        self.stage = stage
        self.partial = partial


@dataclass
class SmoothInit:
    """Step-1 result."""

    transcription: object
    w: np.ndarray
    solution: object

    def interpolate(self, traj, t):
        return self.transcription.interpolate(self.w, traj, t)


@dataclass
class TrainedModel:
    """Trained network together with the final trajectories."""

    spec: MlpSpec
    norm: object
    theta: np.ndarray
    config: PipelineConfig
    transcription: object
    w: np.ndarray
    timings: dict
    statuses: dict
    iterations: dict
    train_sse: float
    train_mse: float
    objective: float
    pretrain_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def model(self):
        return self.transcription.model

    @property
    def total_time(self):
        return float(sum(v for v in self.timings.values() if v is not None))

    def interpolate(self, traj, t):
        return self.transcription.interpolate(self.w, traj, t)

    def slot(self):
        return NetworkSlot(self.spec, self.norm, tuple(range(self.spec.n_out)))


@dataclass
class FrozenNetwork:
    """Trained network without its training problem, e.g. reloaded from JSON.

    Enough for :func:`evaluate`: the network and the training mesh.
    """

    spec: MlpSpec
    norm: object
    theta: np.ndarray
    config: PipelineConfig

    def slot(self):
        return NetworkSlot(self.spec, self.norm, tuple(range(self.spec.n_out)))


def _observation_guess(model, obs):
    """Per trajectory, piecewise-linear interpolation of the observed states."""
    table = {}
    for r in range(model.n_traj):
        for d in range(model.n_x):
            m = (obs.traj == r) & (obs.state == d)
            if not np.any(m):
                continue
            t, v = obs.t[m], obs.value[m]
            ut, inv = np.unique(t, return_inverse=True)
            uv = np.bincount(inv, weights=v) / np.bincount(inv)
            table[(r, d)] = (ut, uv)

    def fx(r, times):
        out = np.tile(np.asarray(model.x0(r), dtype=float), (times.size, 1))
        for d in range(model.n_x):
            if (r, d) in table:
                ut, uv = table[(r, d)]
                out[:, d] = np.interp(times, ut, uv)
        return out

    return fx


def _options(tol, mode, config):
    return IpmOptions(tol=tol, hessian_mode=mode, lbfgs_memory=config.lbfgs_memory, max_iter=config.max_iter)


def smooth_init(model, scheme, obs, lambda_s, options=None):
    """Fit free closure trajectories to data with a smoothness penalty.

    Parameters
    ----------
    model : ContinuousModel
    scheme : CollocationScheme
    obs : ObservationSet
    lambda_s : float
        Weight of the squared derivative of ``z`` at the collocation points.
    options : IpmOptions, optional

    Returns
    -------
    SmoothInit

    Raises
    ------
    StageFailure
        When the solve does not end optimal.
    """
    if obs is None or len(obs) == 0:
        raise EmptySample("smooth initialization needs observations")
    if lambda_s < 0:
        raise InvalidConfig("lambda_s must be nonnegative")
    tr = transcribe(model, scheme, obs, LossSpec(lambda_s=lambda_s), mode="free")
    w0 = tr.guess_from(_observation_guess(model, obs))
    # a large lambda_s adds curvature with no gradient at a constant z guess
    opts = replace(options or IpmOptions(tol=1e-8), max_hessian=SMOOTH_MAX_HESSIAN)
    sol = solve(tr, opts, x0=w0)
    if not sol.success:
        raise StageFailure("step1", sol.status, sol.message, partial=sol)
    return SmoothInit(tr, sol.x, sol)


def observation_mse(transcription, w, obs):
    """Sum and mean of squared residuals at the observation times."""
    if len(obs) == 0:
        return 0.0, 0.0
    pred = np.empty(len(obs))
    for r in np.unique(obs.traj):
        m = obs.traj == r
        x = transcription.interpolate(w, int(r), obs.t[m])[0]
        pred[m] = x[np.arange(m.sum()), obs.state[m]]
    sse = float(np.sum((pred - obs.value) ** 2))
    return sse, sse / len(obs)


def train(model, spec, config, obs, verbose=False):
    """Run the four training stages.

    Parameters
    ----------
    model : ContinuousModel
        Model without closure equations.
    spec : MlpSpec
        Network architecture; its input width must match the model's
        network inputs and its output width the closure count.
    config : PipelineConfig
    obs : ObservationSet
    verbose : bool

    Returns
    -------
    TrainedModel

    Raises
    ------
    StageFailure
        Tagged with the failing stage; ``partial`` holds a dict of what was
        finished.
    """
    if spec.n_in != len(model.network_inputs) or spec.n_out != model.n_z:
        raise InvalidConfig("network widths do not match the model's inputs and closures")
    obs.validate(model)
    scheme = config.scheme(model.horizon)
    timings = dict.fromkeys(STAGES)
    statuses = dict.fromkeys(STAGES)
    iterations = dict.fromkeys(STAGES)
    partial = {"timings": timings, "statuses": statuses, "iterations": iterations}

    def log(msg):
        if verbose:
            print(msg, flush=True)

    # Step 1
    t = time.perf_counter()
    try:
        init = smooth_init(model, scheme, obs, config.lambda_s, _options(1e-8, "exact", config))
    except StageFailure as e:
        timings["step1"] = time.perf_counter() - t
        statuses["step1"] = e.status
        e.partial = partial
        raise
    timings["step1"] = time.perf_counter() - t
    statuses["step1"] = init.solution.status
    iterations["step1"] = init.solution.iterations
    partial["init"] = init
    log(f"step1 {statuses['step1']} in {iterations['step1']} iterations, {timings['step1']:.3f} s")

    # normalization and Step 2
    t = time.perf_counter()
    X, Z = init.transcription.network_points(init.w)
    norm = compute_normalization(X, Z)
    theta = init_params(spec, config.seed)
    history = np.zeros(0)
    if not config.skip_pretrain:
        theta, history = pretrain(spec, norm, theta, X, Z, config.n_init, config.lr)
        timings["step2"] = time.perf_counter() - t
        statuses["step2"] = "Done"
        iterations["step2"] = int(config.n_init)
        log(f"step2 loss {history[0]:.4g} -> {history[-1]:.4g}, {timings['step2']:.3f} s")

    # Steps 3 and 4 share one transcription
    slot = NetworkSlot(spec, norm, tuple(range(model.n_z)))
    tr = transcribe(model, scheme, obs, LossSpec(lambda_r=config.lambda_r), mode="network", networks=[slot])
    X1, Y1, Z1 = init.transcription.unpack(init.w)
    w0 = tr.set_trajectories(tr.x_init, X1, Y1, Z1)
    w0[tr.theta_slice] = theta
    if init.transcription.pi.size:
        free = tr.pi >= 0
        w0[tr.pi[free]] = init.w[init.transcription.pi[free]]
    sol = None
    if not config.skip_lbfgs:
        t = time.perf_counter()
        sol = solve(tr, _options(config.eps1, "lbfgs", config), x0=w0)
        timings["step3"] = time.perf_counter() - t
        statuses["step3"] = sol.status
        iterations["step3"] = sol.iterations
        partial["step3"] = sol
        log(f"step3 {sol.status} in {sol.iterations} iterations, {timings['step3']:.3f} s")
        if not sol.success:
            raise StageFailure("step3", sol.status, sol.message, partial=partial)
    if not config.skip_refinement:
        t = time.perf_counter()
        if sol is None:
            sol = solve(tr, _options(config.eps2, "exact", config), x0=w0)
        else:
            sol = solve(tr, _options(config.eps2, "exact", config), warm=sol)
        timings["step4"] = time.perf_counter() - t
        statuses["step4"] = sol.status
        iterations["step4"] = sol.iterations
        partial["step4"] = sol
        log(f"step4 {sol.status} in {sol.iterations} iterations, {timings['step4']:.3f} s")
        if not sol.success:
            raise StageFailure("step4", sol.status, sol.message, partial=partial)

    w = sol.x
    sse, mse = observation_mse(tr, w, obs)
    return TrainedModel(
        spec=spec,
        norm=norm,
        theta=tr.theta(w).copy(),
        config=config,
        transcription=tr,
        w=w,
        timings=timings,
        statuses=statuses,
        iterations=iterations,
        train_sse=sse,
        train_mse=mse,
        objective=float(sol.objective),
        pretrain_history=history,
    )


@dataclass
class TrajectoryResult:
    """Fixed-network solve of one trajectory."""

    status: str
    transcription: object
    w: np.ndarray
    kkt: float
    iterations: int

    @property
    def success(self):
        return self.status == "Optimal"

    def interpolate(self, t):
        return self.transcription.interpolate(self.w, 0, t)


@dataclass
class Evaluation:
    """Predictions of a trained network on a model variant."""

    trajectories: list
    sse: float | None
    mse: float | None
    max_algebraic: float
    max_bound_violation: float

    @property
    def statuses(self):
        return [r.status for r in self.trajectories]

    @property
    def success(self):
        return all(r.success for r in self.trajectories)


def evaluate(trained, model, obs=None, n_fe=None, K=None, tol=1e-10, max_iter=500):
    """Solve the square collocation system of ``model`` with the trained network.

    Each trajectory is solved on its own with a zero objective.  The network
    parameters are constants, so the only unknowns are the discretized
    trajectories.  The interior-point solve starts from an element-by-element
    Newton march when that march succeeds.

    Parameters
    ----------
    trained : TrainedModel or FrozenNetwork
    model : ContinuousModel
        Model variant (initial states, areas, horizon) with the same
        network inputs and closures as the training model.
    obs : ObservationSet, optional
        When given, the squared prediction error at the observations.
    n_fe, K : int, optional
        Mesh; defaults to the training mesh.

    Returns
    -------
    Evaluation
        Trajectories whose solve did not end optimal are flagged through
        their status; the others are still returned.
    """
    if model.n_z != trained.spec.n_out or len(model.network_inputs) != trained.spec.n_in:
        raise InvalidConfig("evaluation model is not compatible with the trained network")
    n_fe = n_fe or trained.config.n_fe
    K = K or trained.config.K
    scheme = CollocationScheme(n_fe, K, model.horizon)
    results = []
    alg = 0.0
    bnd = 0.0
    for r in range(model.n_traj):
        sub = model.with_initial_states([model.x0(r)])
        tr = transcribe(sub, scheme, mode="network_fixed", networks=[trained.slot()], theta=trained.theta)
        # element marching gives a cheap starting point; the IPM solve decides
        try:
            w0 = march(tr)
        except NonConverged:
            w0 = None
        sol = solve(tr, IpmOptions(tol=tol, max_iter=max_iter), x0=w0)
        c = tr.constraints(sol.x)
        eq = np.abs(c[: tr.n_eq]).max(initial=0.0)
        if tr.alg_rows is not None:
            alg = max(alg, float(np.abs(c[tr.alg_rows.ravel()]).max()))
        viol = np.maximum(tr.x_lower - sol.x, sol.x - tr.x_upper)
        bnd = max(bnd, float(np.max(viol[np.isfinite(viol)], initial=0.0)), 0.0)
        results.append(TrajectoryResult(sol.status, tr, sol.x, float(max(eq, sol.kkt["total"])), sol.iterations))
    sse = mse = None
    if obs is not None and len(obs):
        pred = np.empty(len(obs))
        for r in np.unique(obs.traj):
            m = obs.traj == r
            x = results[int(r)].interpolate(obs.t[m])[0]
            pred[m] = x[np.arange(m.sum()), obs.state[m]]
        sse = float(np.sum((pred - obs.value) ** 2))
        mse = sse / len(obs)
    return Evaluation(results, sse, mse, alg, bnd)
