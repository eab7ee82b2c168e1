import numpy as np
import pytest

from neuraldae import cases
from neuraldae.colloc import transcribe
from neuraldae.errors import EmptySample, InvalidConfig
from neuraldae.ipm import IpmOptions, solve
from neuraldae.mlp import MlpSpec, forward
from neuraldae.ocp import LossSpec, ModelBuilder, ObservationSet, State, Variable
from neuraldae.pipeline import (
    FrozenNetwork,
    PipelineConfig,
    TRIALS,
    evaluate,
    observation_mse,
    smooth_init,
    train,
    trial_config,
)
from neuraldae.sim import make_observations, simulate_truth

X0 = [[10.0, 8.0, 8.0, 1.6], [4.5, 5.0, 5.0, 2.3]]
SPEC = MlpSpec((4, 6, 2), "tanh")
BASE = PipelineConfig(n_fe=8, K=2, lambda_s=1e5, lambda_r=1.0, n_init=800)


@pytest.fixture(scope="module")
def tank_data():
    truth = simulate_truth(cases.build_tank(X0, mode="truth"), 20)
    obs = make_observations(truth, np.linspace(0, 10, 8), ["x0", "x1", "x2"], sigma=0.02)
    return truth, obs


@pytest.fixture(scope="module")
def trained(tank_data):
    return train(cases.build_tank(X0), SPEC, BASE, tank_data[1])


class TestConfig:
    def test_defaults(self):
        c = PipelineConfig()
        assert (c.eps1, c.eps2, c.lbfgs_memory) == (1e-3, 1e-6, 6)

    @pytest.mark.parametrize(
        "kw",
        [
            {"lambda_s": -1.0},
            {"lambda_r": np.nan},
            {"eps1": 1e-6, "eps2": 1e-3},
            {"n_fe": 0},
            {"lbfgs_memory": 0},
            {"skip_lbfgs": True, "skip_refinement": True},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            PipelineConfig(**kw)

    @pytest.mark.parametrize(
        "trial, flags",
        [
            ("0", (False, False, False)),
            ("A", (True, False, False)),
            ("B", (False, False, True)),
            ("C", (True, False, True)),
            ("D", (False, True, False)),
        ],
    )
    def test_trials(self, trial, flags):
        c = trial_config(BASE, trial)
        assert (c.skip_pretrain, c.skip_lbfgs, c.skip_refinement) == flags
        assert c.eps1 == (1e-6 if trial == "C" else BASE.eps1)
        assert c.eps2 <= c.eps1

    def test_unknown_trial(self):
        with pytest.raises(InvalidConfig):
            trial_config(BASE, "E")


class TestSmoothInit:
    def _constant_rate(self):
        b = ModelBuilder([State("x", (0.0,))], closures=[Variable("z")])
        return b.build([b["z"]], (0.0, 2.0))

    def test_recovers_constant_closure(self):
        model = self._constant_rate()
        t = np.linspace(0, 2, 9)
        obs = ObservationSet(np.zeros(9, int), np.zeros(9, int), t, t.copy())
        init = smooth_init(model, PipelineConfig(n_fe=8, K=1).scheme(model.horizon), obs, 0.0, IpmOptions(tol=1e-10))
        _, z = init.transcription.network_points(init.w)
        np.testing.assert_allclose(z, 1.0, atol=1e-6)

    def test_no_observations(self):
        model = self._constant_rate()
        with pytest.raises(EmptySample):
            smooth_init(model, BASE.scheme(model.horizon), ObservationSet([], [], [], []), 1.0)

    def test_flattening(self):
        model = cases.build_population([[0.3, 0.5]], horizon=(0, 40))
        truth = simulate_truth(cases.build_population([[0.3, 0.5]], horizon=(0, 40), mode="truth"), 60)
        obs = make_observations(truth, np.linspace(0, 15, 10), ["x0", "x1"], sigma=0.02)
        scheme = PipelineConfig(n_fe=30, K=3).scheme(model.horizon)
        var, inner = [], []
        for lam in (1e-3, 1e12):
            init = smooth_init(model, scheme, obs, lam)
            z = init.transcription.unpack(init.w)[2][0, :, :, 0]
            var.append(np.var(z))
            inner.append(z.var(axis=1).mean())
        assert var[1] < var[0]
        assert inner[1] <= 1e-12 < inner[0]

    def test_curvature_scaling_applied(self):
        model = cases.build_population([[0.3, 0.5]], horizon=(0, 40))
        t = np.linspace(0, 10, 5)
        obs = ObservationSet(np.zeros(5, int), np.zeros(5, int), t, np.full(5, 0.1))
        init = smooth_init(model, PipelineConfig(n_fe=10, K=3).scheme(model.horizon), obs, 1e12)
        assert init.solution.scaling[0] < 1e-4


class TestTrain:
    def test_all_stages_optimal(self, trained):
        assert trained.statuses == {"step1": "Optimal", "step2": "Done", "step3": "Optimal", "step4": "Optimal"}
        assert all(v >= 0 for v in trained.timings.values())

    def test_train_mse_recomputed(self, trained, tank_data):
        obs = tank_data[1]
        pred = np.array(
            [trained.interpolate(int(r), [t])[0][0, d] for r, d, t in zip(obs.traj, obs.state, obs.t)]
        )
        assert trained.train_mse == pytest.approx(np.mean((pred - obs.value) ** 2), rel=0, abs=1e-12)

    def test_regularization_raises_objective(self, trained, tank_data):
        tr = trained.transcription
        assert np.any(trained.theta != 0)
        assert trained.objective > tr.data_loss(trained.w)

    def test_closure_rows_hold(self, trained):
        ins, z = trained.transcription.network_points(trained.w)
        np.testing.assert_allclose(z, forward(trained.spec, trained.norm, trained.theta, ins), atol=1e-6)

    @pytest.mark.parametrize("trial", sorted(TRIALS))
    def test_structure_identical_across_trials(self, trial, trained, tank_data):
        model = cases.build_tank(X0)
        cfg = trial_config(BASE, trial)
        tr = transcribe(
            model, cfg.scheme(model.horizon), tank_data[1], LossSpec(lambda_r=cfg.lambda_r), mode="network",
            networks=[trained.slot()],
        )
        ref = trained.transcription
        assert (tr.n, tr.m) == (ref.n, ref.m)
        np.testing.assert_array_equal(tr.jac_rows, ref.jac_rows)

    @pytest.mark.parametrize("trial", ["A", "B", "C", "D"])
    def test_trials_complete(self, trial, tank_data):
        tm = train(cases.build_tank(X0), SPEC, trial_config(BASE, trial), tank_data[1])
        ran = [k for k, v in tm.statuses.items() if v is not None]
        expected = {"A": ["step1", "step3", "step4"], "B": ["step1", "step2", "step3"],
                    "C": ["step1", "step3"], "D": ["step1", "step2", "step4"]}[trial]
        assert ran == expected
        assert all(tm.statuses[k] in ("Optimal", "Done") for k in ran)

    def test_refinement_warm_start_keeps_residual(self, trained, tank_data):
        model = cases.build_tank(X0)
        tr = transcribe(
            model, BASE.scheme(model.horizon), tank_data[1], LossSpec(lambda_r=BASE.lambda_r), mode="network",
            networks=[trained.slot()],
        )
        w0 = trained.w.copy()
        s3 = solve(tr, IpmOptions(tol=1e-3, hessian_mode="lbfgs"), x0=w0)
        s4 = solve(tr, IpmOptions(tol=1e-12, max_iter=0), warm=s3)
        assert s4.kkt["total"] == pytest.approx(s3.kkt["total"], rel=1e-10)

    def test_mismatched_network(self, tank_data):
        with pytest.raises(InvalidConfig):
            train(cases.build_tank(X0), MlpSpec((2, 3, 2)), BASE, tank_data[1])

    def test_deterministic(self, trained, tank_data):
        again = train(cases.build_tank(X0), SPEC, BASE, tank_data[1])
        np.testing.assert_array_equal(again.theta, trained.theta)
        assert again.iterations == trained.iterations


class TestEvaluate:
    def test_training_problem_reproduces_train_mse(self, trained, tank_data):
        ev = evaluate(trained, cases.build_tank(X0), tank_data[1])
        assert ev.success
        assert ev.mse == pytest.approx(trained.train_mse, abs=1e-6)

    def test_eval_profiles_keep_level_equality(self, trained):
        model = cases.build_tank([[6.0, 7.0, 7.0, 2.0]], params=cases.TankParams(profiles="eval"))
        ev = evaluate(trained, model)
        assert ev.success
        res = ev.trajectories[0]
        x = res.transcription.unpack(res.w)[0]
        assert np.max(np.abs(x[..., 1] - x[..., 2])) <= 1e-6
        assert ev.max_algebraic <= 1e-6

    def test_frozen_network_matches(self, trained, tank_data):
        frozen = FrozenNetwork(trained.spec, trained.norm, trained.theta, trained.config)
        a = evaluate(trained, cases.build_tank(X0), tank_data[1])
        b = evaluate(frozen, cases.build_tank(X0), tank_data[1])
        assert a.mse == b.mse

    def test_incompatible_model(self, trained):
        with pytest.raises(InvalidConfig):
            evaluate(trained, cases.build_population([[0.3, 0.5]]))

    def test_observation_mse(self, trained, tank_data):
        sse, mse = observation_mse(trained.transcription, trained.w, tank_data[1])
        assert sse == pytest.approx(trained.train_sse, rel=1e-14)
        assert mse == pytest.approx(sse / len(tank_data[1]))
