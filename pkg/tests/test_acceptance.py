"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL: ...`` line.  The expensive
training runs live in module fixtures and are shared between criteria.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial import legendre

from neuraldae import cases, cli, pipeline, sim
from neuraldae.colloc import CollocationScheme, radau_points, transcribe
from neuraldae.ipm import IpmOptions, solve

from conftest import decay_model, dense_lower, fd_hessian, fd_jacobian, random_function
from test_cli import files, read_rows, strip_timings, write_config
from test_ipm import bound_active, product, quadratic


def report(number, ok, detail, capsys):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def training_data(cfg, target="training"):
    """Truth and observations of a configuration, as ``generate`` makes them."""
    _, _, _, ospec, truth_n_fe = cfg.setup(target)
    truth = sim.simulate_truth(cfg.model(target, mode="truth"), truth_n_fe, cfg.data["data"].get("truth_K", 3))
    times = np.linspace(ospec["start"], ospec["stop"], ospec["count"])
    seed = cfg.seeds["data" if target == "training" else "evaluation"]
    obs = sim.make_observations(truth, times, ospec["states"], ospec["sigma"], seed, ospec.get("relative", True))
    return truth, obs


def total_variation(tr, w):
    """Sum of jumps of ``z`` along the time-ordered collocation points."""
    return float(np.abs(np.diff(tr.network_points(w)[1][:, 0])).sum())


# shared runs ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def tank_ablation():
    cfg = cli.load_config("tank")
    _, obs = training_data(cfg)
    _, eval_obs = training_data(cfg, "evaluation")
    model = cfg.model()
    spec = cfg.mlp_spec(model)
    base = cfg.pipeline_config()
    runs = {}
    for trial in pipeline.TRIALS:
        t0 = time.perf_counter()
        tm = pipeline.train(model, spec, pipeline.trial_config(base, trial), obs)
        wall = time.perf_counter() - t0
        ev = pipeline.evaluate(tm, cfg.model("evaluation"), eval_obs)
        runs[trial] = {"trained": tm, "wall": wall, "test_mse": ev.mse, "eval_ok": ev.success}
    return runs, obs


@pytest.fixture(scope="module")
def fedbatch_run():
    cfg = cli.load_config("fedbatch")
    _, obs = training_data(cfg)
    t0 = time.perf_counter()
    tm = pipeline.train(cfg.model(), cfg.mlp_spec(cfg.model()), cfg.pipeline_config(), obs)
    wall = time.perf_counter() - t0
    _, eval_obs = training_data(cfg, "evaluation")
    ev = pipeline.evaluate(tm, cfg.model("evaluation"), eval_obs)
    return cfg, obs, tm, wall, ev


# criteria -------------------------------------------------------------------------


def test_1_ad_correctness(capsys):
    t0 = time.perf_counter()
    worst_g, worst_j, worst_h = 0.0, 0.0, 0.0
    acts = ("tanh", "softplus", "swish")
    for seed in range(50):
        rng = np.random.default_rng(seed)
        act = acts[seed % 3]
        scalar = random_function(rng, n_out=1, activation=None)
        w = rng.uniform(-1, 1, scalar.n_vars)
        g = scalar.jacobian(w).toarray()
        worst_g = max(worst_g, float((np.abs(g - fd_jacobian(scalar, w)) / np.maximum(1.0, np.abs(g))).max()))
        f = random_function(rng, activation=act)
        w = rng.uniform(-1, 1, f.n_vars)
        J = f.jacobian(w).toarray()
        worst_j = max(worst_j, float((np.abs(J - fd_jacobian(f, w)) / np.maximum(1.0, np.abs(J))).max()))
        lam = rng.normal(size=f.n_out)
        H = dense_lower(f.hessian(w, lam), f.n_vars)
        worst_h = max(worst_h, float((np.abs(H - fd_hessian(f, w, lam)) / np.maximum(1.0, np.abs(H))).max()))
    elapsed = time.perf_counter() - t0
    ok = max(worst_g, worst_j) <= 1e-6 and worst_h <= 1e-5 and elapsed < 10.0
    report(1, ok, f"gradient {worst_g:.1e}, Jacobian {worst_j:.1e}, Hessian {worst_h:.1e} rel. error, {elapsed:.1f} s", capsys)


def test_2_collocation_accuracy(capsys):
    t0 = time.perf_counter()
    m = decay_model()
    tr = transcribe(m, CollocationScheme(20, 3, m.horizon), mode="known")
    sol = solve(tr, IpmOptions(tol=1e-12))
    err = abs(tr.interpolate(sol.x, 0, [1.0])[0][0, 0] - math.exp(-1.0))
    errs = []
    for nfe in (2, 4):
        tr_n = transcribe(m, CollocationScheme(nfe, 3, m.horizon), mode="known")
        x = tr_n.interpolate(solve(tr_n, IpmOptions(tol=1e-12)).x, 0, [1.0])[0][0, 0]
        errs.append(abs(x - math.exp(-1.0)))
    order = math.log2(errs[0] / errs[1])
    elapsed = time.perf_counter() - t0
    ok = sol.success and err <= 1e-8 and order >= 3 and elapsed < 5.0
    report(2, ok, f"|x(1) - 1/e| = {err:.1e}, observed order {order:.2f}, {elapsed:.2f} s", capsys)


def test_3_radau_points(capsys):
    k2 = radau_points(2)
    # right Radau points: roots of P_K - P_{K-1} on [-1, 1], mapped to [0, 1]
    oracle = np.sort((legendre.legroots([0, 0, -1, 1]).real + 1) / 2)
    e2 = float(np.max(np.abs(k2 - [1 / 3, 1.0])))
    e3 = float(np.max(np.abs(radau_points(3) - oracle)))
    report(3, e2 <= 1e-12 and e3 <= 1e-10, f"K=2 error {e2:.1e}, K=3 error vs Legendre roots {e3:.1e}", capsys)


def _kkt_unscaled(name, x, lam, z):
    """Stationarity, feasibility and complementarity from the closed forms."""
    if name == "quadratic":
        return abs(2 * (x[0] - 2.0)), 0.0, 0.0
    if name == "product":
        st = np.array([1.0 + lam[0] * x[1] - z[0], 1.0 + lam[0] * x[0] - z[1]])
        return float(np.abs(st).max()), abs(x[0] * x[1] - 1.0), float(np.abs(x * z).max())
    return abs(2 * (x[0] + 1.0) - z[0]), 0.0, abs(x[0] * z[0])


def test_4_ipm_correctness(capsys):
    t0 = time.perf_counter()
    expected = {"quadratic": (quadratic, [2.0]), "product": (product, [1.0, 1.0]), "bound": (bound_active, [0.0])}
    worst_kkt, worst_x, statuses = 0.0, 0.0, set()
    for mode in ("exact", "lbfgs"):
        for name, (build, xstar) in expected.items():
            sol = solve(build(), IpmOptions(tol=1e-9, hessian_mode=mode))
            statuses.add(sol.status)
            worst_kkt = max(worst_kkt, sol.kkt["total"], *_kkt_unscaled(name, sol.x, sol.lam, sol.z_lower))
            worst_x = max(worst_x, float(np.abs(sol.x - xstar).max()))
    elapsed = time.perf_counter() - t0
    ok = statuses == {"Optimal"} and worst_kkt <= 1e-8 and worst_x <= 1e-6 and elapsed < 5.0
    report(4, ok, f"KKT {worst_kkt:.1e}, solution error {worst_x:.1e}, statuses {sorted(statuses)}, {elapsed:.2f} s", capsys)


def test_5_tank_pipeline(tank_ablation, capsys):
    runs, obs = tank_ablation
    tm, wall = runs["0"]["trained"], runs["0"]["wall"]
    tr = tm.transcription
    x = tr.unpack(tm.w)[0]
    level = float(np.abs(x[..., 1] - x[..., 2]).max())
    alg = float(np.abs(tr.constraints(tm.w)[tr.row_blocks["algebraic"]]).max())
    bound = 3.0 * obs.noise_variance_sum()
    optimal = all(v in ("Optimal", "Done") for v in tm.statuses.values())
    ok = optimal and level <= 1e-6 and alg <= 1e-6 and tm.train_sse <= bound and wall < 180.0
    report(
        5,
        ok,
        f"statuses {tm.statuses}, |x1-x2| {level:.1e}, algebraic {alg:.1e}, "
        f"train SSE {tm.train_sse:.4g} <= {bound:.4g}, {wall:.1f} s",
        capsys,
    )


def test_6_ablation_ordering(tank_ablation, capsys):
    runs, _ = tank_ablation
    total = {k: r["trained"].total_time for k, r in runs.items()}
    train = [r["trained"].train_mse for r in runs.values()]
    test = [r["test_mse"] for r in runs.values()]
    d_largest = max(total, key=total.get) == "D"
    c_smallest = min(total, key=total.get) == "C"
    spread = max(max(train) / min(train), max(test) / min(test))
    ok = d_largest and c_smallest and spread <= 1.25 and all(r["eval_ok"] for r in runs.values())
    times = ", ".join(f"{k} {v:.1f}s" for k, v in total.items())
    report(6, ok, f"totals {times}; D largest {d_largest}, C smallest {c_smallest}; MSE spread {spread:.3f}", capsys)


def test_7_lyapunov_constraint(capsys):
    cfg = cli.load_config("population")
    _, obs = training_data(cfg)
    p = cases.PopulationParams()
    n_fe, K = cfg.data["evaluation"]["n_fe"], cfg.data["scheme"]["K"]
    ext = cfg.model("evaluation")
    t0 = time.perf_counter()
    rates = {}
    for lyap in (True, False):
        d = cfg.data["data"]
        opts = {**cfg.data["case_options"], "with_lyapunov": lyap}
        model = cli.build_case_model("population", d["x0"], tuple(d["horizon"]), opts, "neural")
        tm = pipeline.train(model, cfg.mlp_spec(model), cfg.pipeline_config(), obs)
        P = tm.transcription.point_arrays(tm.w)
        zi = model.n_x + model.n_y
        train_rate = float(cases.lyapunov_rate(p, P[..., 0], P[..., 1], P[..., zi]).max())
        ev = pipeline.evaluate(tm, ext, n_fe=n_fe, K=K)
        Q = ev.trajectories[0].transcription.point_arrays(ev.trajectories[0].w)
        ext_rate = float(cases.lyapunov_rate(p, Q[..., 0], Q[..., 1], Q[..., ext.n_x + ext.n_y]).max())
        rates[lyap] = (train_rate, ext_rate, ev.success)
    elapsed = time.perf_counter() - t0
    ok = rates[True][0] <= 1e-8 and rates[False][1] > 0 and rates[False][2] and elapsed < 180.0
    report(
        7,
        ok,
        f"with constraint max dV/dt {rates[True][0]:.1e}; without, extended max dV/dt {rates[False][1]:.1e}; {elapsed:.1f} s",
        capsys,
    )


def test_8_smoothing_sweep(capsys):
    cfg = cli.load_config("population")
    _, obs = training_data(cfg)
    model = cfg.model()
    scheme = cfg.pipeline_config().scheme(model.horizon)
    tv = []
    for lam in (1e-3, 1.0, 1e3):
        init = pipeline.smooth_init(model, scheme, obs, lam)
        tv.append(total_variation(init.transcription, init.w))
    ok = all(b <= a for a, b in zip(tv, tv[1:]))
    report(8, ok, "total variation of z_init " + ", ".join(f"{v:.4g}" for v in tv), capsys)


def test_9_fedbatch(fedbatch_run, capsys):
    cfg, obs, tm, wall, ev = fedbatch_run
    fp = cases.FedbatchParams(**cfg.data["case_options"])
    min_state = min(float(r.w[r.transcription.xi].min()) for r in ev.trajectories)
    ratio = ev.mse / tm.train_mse
    P = tm.transcription.point_arrays(tm.w)
    S, z = P[..., 2], P[..., tm.model.n_x + tm.model.n_y]
    s_obs = obs.value[obs.state == 2]
    inside = (S >= s_obs.min()) & (S <= s_obs.max())
    mu = cases.monod(fp, S[inside])
    rel = float(np.linalg.norm(z[inside] - mu) / np.linalg.norm(mu))
    ok = ev.success and min_state >= 0 and ev.max_bound_violation == 0 and ratio <= 5 and rel <= 0.15 and wall < 180
    report(
        9,
        ok,
        f"min state {min_state:.1e}, test/train MSE {ratio:.2f}, z vs Monod rel. L2 {rel:.4f}, train {wall:.1f} s",
        capsys,
    )


def test_10_determinism(tmp_path, capsys):
    differing = []
    shipped = tmp_path / "tank.toml"
    shipped.write_text((Path(cli.__file__).parent / "configs" / "tank.toml").read_text())
    small = write_config(tmp_path / "small.toml")
    for cfg, commands in ((str(shipped), ("generate", "train", "evaluate")), (small, ("generate", "ablate"))):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{Path(cfg).stem}_{name}"
            for cmd in commands:
                assert cli.main([cmd, "--config", cfg, "--out", str(out)]) == 0
            outs.append(files(out))
        a, b = outs
        if a.keys() != b.keys():
            differing.append("file sets")
        for name in a.keys() & b.keys():
            if name.suffix == ".json" and name.name in ("summary.json", "ablation.json"):
                same = strip_timings(json.loads(a[name])) == strip_timings(json.loads(b[name]))
            elif name.name == "ablation.csv":
                keep = [cli.ABLATION_COLUMNS.index(c) for c in ("trial", "train_mse", "test_mse", "status")]
                rows = [read_rows(tmp_path / f"{Path(cfg).stem}_{d}" / name) for d in "ab"]
                same = [[r[i] for i in keep] for r in rows[0]] == [[r[i] for i in keep] for r in rows[1]]
            else:
                same = a[name] == b[name]
            if not same:
                differing.append(str(name))
    n = sum(1 for _ in (tmp_path / "tank_a").rglob("*.*")) + sum(1 for _ in (tmp_path / "small_a").rglob("*.*"))
    report(10, not differing, f"{n} files compared (wall-clock timings excluded), differing: {differing or 'none'}", capsys)
