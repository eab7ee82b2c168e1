"""Command-line front end.

Subcommands
-----------
generate
    Simulate the true system and write noisy observations.
train
    Run the four training stages on the generated observations.
evaluate
    Solve the square problem of an evaluation setup with the trained network.
ablate
    Train the five ablation trials on the same data and tabulate them.

Every subcommand takes ``--config`` (a TOML file or the name of a shipped
case: ``tank``, ``population``, ``fedbatch``), ``--out`` (the run directory),
``--seed`` and ``--verbose``.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import importlib
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import cases, pipeline, sim
from .errors import ConfigError, DataError, DataNotFound, IndexOutOfRange, InvalidConfig, SolverError
from .mlp import ACTIVATIONS, MlpSpec, export_weights, load_weights
from .ocp import ObservationSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "CASES",
    "RunConfig",
    "cmd_ablate",
    "cmd_evaluate",
    "cmd_generate",
    "cmd_train",
    "load_config",
    "main",
]

SCHEMA_VERSION = "1.0"
CASES = ("tank", "population", "fedbatch", "custom")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_X0 = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _NUM}}
_HORIZON = {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM}
_OBSERVATIONS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["states", "start", "stop", "count", "sigma"],
    "properties": {
        "states": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "start": _NUM,
        "stop": _NUM,
        "count": _POS_INT,
        "sigma": {"type": "number", "minimum": 0},
        "relative": {"type": "boolean"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["case", "scheme", "pipeline", "network", "data", "seeds", "output"],
    "properties": {
        "case": {"enum": list(CASES)},
        "case_options": {"type": "object"},
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_fe", "K"],
            "properties": {"n_fe": _POS_INT, "K": _POS_INT},
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_s": {"type": "number", "minimum": 0},
                "lambda_r": {"type": "number", "minimum": 0},
                "n_init": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "minimum": 0},
                "eps1": {"type": "number", "exclusiveMinimum": 0},
                "eps2": {"type": "number", "exclusiveMinimum": 0},
                "lbfgs_memory": _POS_INT,
                "max_iter": _POS_INT,
                "skip_pretrain": {"type": "boolean"},
                "skip_lbfgs": {"type": "boolean"},
                "skip_refinement": {"type": "boolean"},
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["hidden", "activation"],
            "properties": {
                "hidden": {"type": "array", "minItems": 1, "items": _POS_INT},
                "activation": {"enum": list(ACTIVATIONS)},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x0", "horizon", "truth_n_fe", "observations"],
            "properties": {
                "x0": _X0,
                "horizon": _HORIZON,
                "truth_n_fe": _POS_INT,
                "truth_K": _POS_INT,
                "observations": _OBSERVATIONS,
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x0": _X0,
                "horizon": _HORIZON,
                "n_fe": _POS_INT,
                "K": _POS_INT,
                "truth_n_fe": _POS_INT,
                "case_options": {"type": "object"},
                "observations": _OBSERVATIONS,
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["data", "network", "evaluation"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("data", "network", "evaluation")},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grid_points": {"type": "integer", "minimum": 2}},
        },
    },
}


# configuration --------------------------------------------------------------------


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def shipped_config(case):
    """Parsed default configuration of a shipped case."""
    text = resources.files("neuraldae").joinpath("configs", f"{case}.toml").read_text()
    return tomllib.loads(text)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    ``data`` holds the merged TOML table as plain Python values; the
    accessors below turn it into library objects.
    """

    data: dict

    @property
    def case(self):
        return self.data["case"]

    @property
    def seeds(self):
        return dict(self.data["seeds"])

    @property
    def grid_points(self):
        return int(self.data["output"].get("grid_points", 201))

    @property
    def has_evaluation(self):
        return "evaluation" in self.data

    def pipeline_config(self):
        s = self.data["scheme"]
        return pipeline.PipelineConfig(
            n_fe=s["n_fe"], K=s["K"], seed=self.data["seeds"]["network"], **self.data["pipeline"]
        )

    def mlp_spec(self, model):
        net = self.data["network"]
        return MlpSpec((len(model.network_inputs), *net["hidden"], model.n_z), net["activation"])

    def setup(self, target):
        """``(x0, horizon, case_options, observations, truth_n_fe)`` of a target."""
        d = self.data["data"]
        opts = dict(self.data.get("case_options", {}))
        if target == "training":
            return d["x0"], d["horizon"], opts, d["observations"], d["truth_n_fe"]
        e = self.data.get("evaluation", {})
        horizon = e.get("horizon", d["horizon"])
        scale = (horizon[1] - horizon[0]) / (d["horizon"][1] - d["horizon"][0])
        truth_n_fe = e.get("truth_n_fe", max(1, round(d["truth_n_fe"] * scale)))
        opts.update(e.get("case_options", {}))
        return e.get("x0", d["x0"]), horizon, opts, e.get("observations", d["observations"]), truth_n_fe

    def model(self, target="training", mode="neural"):
        x0, horizon, opts, _, _ = self.setup(target)
        return build_case_model(self.case, x0, tuple(horizon), opts, mode)

    def to_json(self):
        return copy.deepcopy(self.data)


def build_case_model(case, x0, horizon, options, mode):
    """Model of a named case; ``options`` are the case's TOML options."""
    opts = dict(options)
    try:
        if case == "tank":
            return cases.build_tank(x0, horizon, cases.TankParams(**opts), mode)
        if case == "population":
            lyap = bool(opts.pop("with_lyapunov", False))
            return cases.build_population(x0, horizon, cases.PopulationParams(**opts), mode, with_lyapunov=lyap)
        if case == "fedbatch":
            return cases.build_fedbatch(x0, horizon, cases.FedbatchParams(**opts), mode)
    except TypeError as e:
        raise InvalidConfig(f"bad case_options for {case}: {e}") from None
    factory = opts.pop("factory", None)
    if not isinstance(factory, str) or ":" not in factory:
        raise InvalidConfig("custom case needs case_options.factory = 'module:function'")
    mod, _, fn = factory.partition(":")
    try:
        func = getattr(importlib.import_module(mod), fn)
    except (ImportError, AttributeError) as e:
        raise InvalidConfig(f"cannot import {factory}: {e}") from None
    return func(x0, horizon=horizon, mode=mode, **opts)


def load_config(source, seed=None):
    """Read, merge with the case defaults and validate a run configuration.

    Parameters
    ----------
    source : str, Path or dict
        TOML path, shipped case name, or an already parsed table.
    seed : int, optional
        Overrides every seed: data and network use ``seed``, the evaluation
        noise ``seed + 1``.

    Raises
    ------
    ConfigError
        Unreadable TOML, unknown keys, wrong types or inconsistent values.
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        path = Path(source)
        if not path.exists() and str(source) in CASES[:3]:
            raw = shipped_config(str(source))
        else:
            try:
                raw = tomllib.loads(path.read_text())
            except OSError as e:
                raise InvalidConfig(f"cannot read config {path}: {e}") from None
            except tomllib.TOMLDecodeError as e:
                raise InvalidConfig(f"invalid TOML in {path}: {e}") from None
    case = raw.get("case")
    if case not in CASES:
        raise InvalidConfig(f"case must be one of {', '.join(CASES)}, got {case!r}")
    merged = raw if case == "custom" else _merge(shipped_config(case), raw)
    if seed is not None:
        if seed < 0:
            raise InvalidConfig("seed must be nonnegative")
        merged["seeds"] = {"data": int(seed), "network": int(seed), "evaluation": int(seed) + 1}
    try:
        jsonschema.validate(merged, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InvalidConfig(f"config {where}: {e.message}") from None
    cfg = RunConfig(merged)
    cfg.pipeline_config()
    for target in ("training", "evaluation") if cfg.has_evaluation else ("training",):
        x0, horizon, _, obs, _ = cfg.setup(target)
        if not horizon[1] > horizon[0]:
            raise InvalidConfig(f"{target} horizon is empty")
        if not horizon[0] <= obs["start"] <= obs["stop"] <= horizon[1]:
            raise InvalidConfig(f"{target} observation times leave the horizon")
        model = cfg.model(target)
        for s in obs["states"]:
            model.state_index(s)
    return cfg


# files ----------------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _names(model):
    return [s.name for s in model.states] + [v.name for v in model.algebraics] + [v.name for v in model.closures]


def write_trajectory_csv(path, model, t, xyz):
    """``t,<names>`` with one row per time; ``xyz`` from ``interpolate``."""
    values = np.hstack([np.atleast_2d(a).reshape(len(t), -1) for a in xyz])
    _write_csv(path, ["t", *_names(model)], [[_fmt(ti), *map(_fmt, row)] for ti, row in zip(t, values)])


def write_observations(path, rows):
    _write_csv(path, ["trajectory_id", "t", "state_name", "value"], [(r, _fmt(t), s, _fmt(v)) for r, t, s, v in rows])


def read_observations(directory, model):
    """Observations of every trajectory of ``model`` from ``observations_<r>.csv``.

    Raises
    ------
    DataNotFound
        A file is missing.
    DataError
        A row is malformed or names an unknown trajectory or state.
    """
    names = [s.name for s in model.states]
    traj, state, t, val = [], [], [], []
    for r in range(model.n_traj):
        path = Path(directory) / f"observations_{r}.csv"
        if not path.exists():
            raise DataNotFound(f"missing observation file {path}")
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["trajectory_id", "t", "state_name", "value"]:
                raise DataError(f"{path}: unexpected header {header}")
            for k, row in enumerate(reader, start=2):
                try:
                    rid, ti, name, v = int(row[0]), float(row[1]), row[2], float(row[3])
                except (ValueError, IndexError):
                    raise DataError(f"{path}:{k}: malformed row") from None
                if rid != r:
                    raise IndexOutOfRange(f"{path}:{k}: trajectory {rid} in the file of trajectory {r}")
                if name not in names:
                    raise IndexOutOfRange(f"{path}:{k}: unknown state {name!r}")
                traj.append(rid)
                state.append(names.index(name))
                t.append(ti)
                val.append(v)
    return ObservationSet(traj, state, t, val).validate(model)


def read_truth(path):
    """``(t, values)`` of a truth CSV, or ``None`` when it does not exist."""
    if not Path(path).exists():
        return None
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


def _grid(model, n):
    return np.linspace(model.horizon[0], model.horizon[1], n)


def _target_dir(out, target):
    return Path(out) if target == "training" else Path(out) / "eval"


# commands ---------------------------------------------------------------------------


def _log(verbose, msg):
    if verbose:
        print(msg, file=sys.stderr, flush=True)


def cmd_generate(cfg, out, verbose=False):
    """Simulate the truth and write observation, truth and manifest files.

    Training data go to ``out``, evaluation data to ``out/eval``.  Each
    trajectory gets ``observations_<r>.csv`` and ``truth_<r>.csv``.
    """
    out = Path(out)
    targets = ("training", "evaluation") if cfg.has_evaluation else ("training",)
    seeds = cfg.seeds
    manifest = {"schema_version": SCHEMA_VERSION, "case": cfg.case, "seeds": seeds, "config": cfg.to_json(), "files": []}
    for target in targets:
        _, _, _, ospec, truth_n_fe = cfg.setup(target)
        model = cfg.model(target, mode="truth")
        truth = sim.simulate_truth(model, truth_n_fe, cfg.data["data"].get("truth_K", 3))
        _log(verbose, f"{target}: truth on {truth.scheme.n_fe} elements, refinement error {truth.refinement_error:.2e}")
        times = np.linspace(ospec["start"], ospec["stop"], ospec["count"])
        seed = seeds["data"] if target == "training" else seeds["evaluation"]
        obs = sim.make_observations(truth, times, ospec["states"], ospec["sigma"], seed, ospec.get("relative", True))
        rows = obs.to_rows([s.name for s in model.states])
        d = _target_dir(out, target)
        grid = _grid(model, cfg.grid_points)
        for r in range(model.n_traj):
            write_observations(d / f"observations_{r}.csv", [row for row in rows if row[0] == r])
            write_trajectory_csv(d / f"truth_{r}.csv", model, grid, truth.interpolate(r, grid))
            manifest["files"] += [
                str((d / f"observations_{r}.csv").relative_to(out)),
                str((d / f"truth_{r}.csv").relative_to(out)),
            ]
        manifest[f"{target}_noise_sigma"] = [
            {"trajectory": int(r), "state": model.states[s].name, "sigma": float(v)}
            for (r, s), v in sorted(obs.sigma.items())
        ]
        manifest[f"{target}_truth_elements"] = int(truth.scheme.n_fe)
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _timings(trained_timings):
    t = {k: (None if v is None else round(float(v), 3)) for k, v in trained_timings.items()}
    t["total"] = round(float(sum(v for v in trained_timings.values() if v is not None)), 3)
    return t


def _run_training(cfg, model, obs, verbose):
    """Train and return ``(trained or None, record)`` with the summary fields."""
    spec = cfg.mlp_spec(model)
    pconf = cfg.pipeline_config()
    return _train_record(model, spec, pconf, obs, verbose)


def _train_record(model, spec, pconf, obs, verbose):
    try:
        tm = pipeline.train(model, spec, pconf, obs, verbose=verbose)
    except pipeline.StageFailure as e:
        part = e.partial if isinstance(e.partial, dict) else {}
        empty = dict.fromkeys(pipeline.STAGES)
        rec = {
            "success": False,
            "failed_stage": e.stage,
            "message": str(e),
            "timings": _timings(part.get("timings", empty)),
            "statuses": dict(part.get("statuses", empty)),
            "iterations": dict(part.get("iterations", empty)),
            "train_sse": None,
            "train_mse": None,
            "objective": None,
        }
        return None, rec
    rec = {
        "success": True,
        "failed_stage": None,
        "message": None,
        "timings": _timings(tm.timings),
        "statuses": dict(tm.statuses),
        "iterations": dict(tm.iterations),
        "train_sse": tm.train_sse,
        "train_mse": tm.train_mse,
        "objective": tm.objective,
    }
    return tm, rec


def cmd_train(cfg, out, verbose=False):
    """Train on ``out/observations_<r>.csv``.

    Writes ``model.json``, ``summary.json`` and ``trajectory_<r>.csv``.  A
    failing stage is recorded in the summary and gives exit code 4.
    """
    out = Path(out)
    model = cfg.model("training")
    obs = read_observations(out, model)
    tm, rec = _run_training(cfg, model, obs, verbose)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "train",
        "case": cfg.case,
        "config": cfg.to_json(),
        "seeds": cfg.seeds,
        "test_mse": None,
        **rec,
    }
    _write_json(out / "summary.json", summary)
    if tm is None:
        return EXIT_SOLVER
    _write_json(
        out / "model.json",
        {
            "schema_version": SCHEMA_VERSION,
            "case": cfg.case,
            "network": export_weights(tm.spec, tm.norm, tm.theta),
            "pipeline": tm.config.to_dict(),
            "train_mse": tm.train_mse,
        },
    )
    grid = _grid(model, cfg.grid_points)
    for r in range(model.n_traj):
        write_trajectory_csv(out / f"trajectory_{r}.csv", model, grid, tm.interpolate(r, grid))
    return EXIT_OK


def load_network(path):
    """:class:`~neuraldae.pipeline.FrozenNetwork` from a ``model.json`` file."""
    path = Path(path)
    if not path.exists():
        raise DataNotFound(f"missing model file {path}")
    try:
        data = json.loads(path.read_text())
        spec, norm, theta = load_weights(data["network"])
        pconf = pipeline.PipelineConfig(**data["pipeline"])
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"{path}: not a trained model ({e})") from None
    return pipeline.FrozenNetwork(spec, norm, theta, pconf)


def _case_constraints(case, options, ev, model):
    """Case-specific constraint maxima over all collocation points."""
    extra = {}
    if case == "tank":
        extra["level_equality"] = max(
            float(np.abs(r.w[r.transcription.xi][..., 1] - r.w[r.transcription.xi][..., 2]).max())
            for r in ev.trajectories
        )
    elif case == "population" and model.n_x == 2:
        p = cases.PopulationParams(**{k: v for k, v in options.items() if k != "with_lyapunov"})
        rates = []
        for r in ev.trajectories:
            P = r.transcription.point_arrays(r.w)
            rates.append(float(cases.lyapunov_rate(p, P[..., 0], P[..., 1], P[..., 2]).max()))
        extra["lyapunov_rate"] = max(rates)
    return extra


def _evaluate_record(cfg, net, target, out):
    """Evaluate ``net`` on a target; returns ``(evaluation, record)``."""
    model = cfg.model(target)
    options = cfg.setup(target)[2]
    d = _target_dir(out, target)
    try:
        obs = read_observations(d, model)
    except DataNotFound:
        obs = None
    e = cfg.data.get("evaluation", {}) if target == "evaluation" else {}
    ev = pipeline.evaluate(net, model, obs, n_fe=e.get("n_fe"), K=e.get("K"))
    trajs = []
    for r, res in enumerate(ev.trajectories):
        mse = None
        if obs is not None:
            m = obs.traj == r
            x = res.interpolate(obs.t[m])[0]
            mse = float(np.mean((x[np.arange(m.sum()), obs.state[m]] - obs.value[m]) ** 2))
        truth = read_truth(d / f"truth_{r}.csv")
        mse_truth = None
        if truth is not None:
            t, vals = truth
            x = res.interpolate(t)[0]
            mse_truth = float(np.mean((x - vals[:, : model.n_x]) ** 2))
        trajs.append(
            {"id": r, "status": res.status, "iterations": int(res.iterations), "kkt": float(res.kkt), "mse": mse, "mse_truth": mse_truth}
        )
    constraints = {"algebraic": ev.max_algebraic, "bounds": ev.max_bound_violation}
    constraints.update(_case_constraints(cfg.case, options, ev, model))
    rec = {"success": ev.success, "trajectories": trajs, "constraints": constraints, "test_mse": ev.mse}
    return ev, model, rec


def cmd_evaluate(cfg, out, target=None, verbose=False):
    """Evaluate ``out/model.json`` on the training or evaluation setup.

    Writes ``evaluation_<target>.json`` and
    ``predictions/<target>_<r>.csv``.  Trajectories that do not solve are
    flagged and give exit code 4 after all of them were attempted.
    """
    out = Path(out)
    target = target or ("evaluation" if cfg.has_evaluation else "training")
    net = load_network(out / "model.json")
    ev, model, rec = _evaluate_record(cfg, net, target, out)
    for t in rec["trajectories"]:
        _log(verbose, f"trajectory {t['id']}: {t['status']} in {t['iterations']} iterations, mse {t['mse']}")
    grid = _grid(model, cfg.grid_points)
    for r, res in enumerate(ev.trajectories):
        write_trajectory_csv(out / "predictions" / f"{target}_{r}.csv", model, grid, res.interpolate(grid))
    _write_json(
        out / f"evaluation_{target}.json",
        {"schema_version": SCHEMA_VERSION, "command": "evaluate", "case": cfg.case, "config": cfg.to_json(), "target": target, **rec},
    )
    return EXIT_OK if ev.success else EXIT_SOLVER


ABLATION_COLUMNS = ("trial", "step1", "step2", "step3", "step4", "total", "train_mse", "test_mse", "status")


def cmd_ablate(cfg, out, verbose=False):
    """Train trials 0, A, B, C and D on the same data.

    Writes ``ablation.json`` and ``ablation.csv`` and prints the table.
    Failed trials stay in the table; any failure gives exit code 4.
    """
    out = Path(out)
    model = cfg.model("training")
    obs = read_observations(out, model)
    spec = cfg.mlp_spec(model)
    base = cfg.pipeline_config()
    rows = []
    for trial in pipeline.TRIALS:
        _log(verbose, f"trial {trial}")
        tm, rec = _train_record(model, spec, pipeline.trial_config(base, trial), obs, verbose)
        test = None
        if tm is not None and cfg.has_evaluation:
            test = _evaluate_record(cfg, tm, "evaluation", out)[2]["test_mse"]
        rec.pop("objective")
        rec.pop("message")
        rec.pop("train_sse")
        rows.append({"trial": trial, **rec, "test_mse": test})
    _write_json(
        out / "ablation.json",
        {"schema_version": SCHEMA_VERSION, "command": "ablate", "case": cfg.case, "config": cfg.to_json(), "seeds": cfg.seeds, "trials": rows},
    )
    table = []
    for row in rows:
        t = row["timings"]
        status = "ok" if row["success"] else f"failed at {row['failed_stage']}"
        table.append(
            [row["trial"], *("-" if t[k] is None else f"{t[k]:.3f}" for k in ("step1", "step2", "step3", "step4", "total"))]
            + ["-" if row["train_mse"] is None else f"{row['train_mse']:.6g}", "-" if row["test_mse"] is None else f"{row['test_mse']:.6g}", status]
        )
    _write_csv(out / "ablation.csv", ABLATION_COLUMNS, table)
    widths = [max(len(str(c)), *(len(r[i]) for r in table)) for i, c in enumerate(ABLATION_COLUMNS)]
    for line in [list(ABLATION_COLUMNS), *table]:
        print("  ".join(str(c).ljust(w) for c, w in zip(line, widths)).rstrip())
    return EXIT_OK if all(r["success"] for r in rows) else EXIT_SOLVER


# entry point ------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="neuraldae", description="Train neural closures of DAE models by collocation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("generate", "simulate the truth and write observations"),
        ("train", "run the four training stages"),
        ("evaluate", "solve an evaluation setup with the trained network"),
        ("ablate", "compare the ablation trials 0, A, B, C and D"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="TOML file or shipped case name (tank, population, fedbatch)")
        s.add_argument("--out", default="run", help="run directory (default: run)")
        s.add_argument("--seed", type=int, default=None, help="override all seeds")
        s.add_argument("--verbose", action="store_true", help="progress messages on stderr")
        if name == "evaluate":
            s.add_argument("--target", choices=("training", "evaluation"), default=None, help="setup to evaluate (default: evaluation when configured)")
    return p


def main(argv=None):
    """Run the command line; returns the exit code."""
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "generate":
            return cmd_generate(cfg, args.out, args.verbose)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.verbose)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, args.target, args.verbose)
        return cmd_ablate(cfg, args.out, args.verbose)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
