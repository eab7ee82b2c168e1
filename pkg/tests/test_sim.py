import math

import numpy as np
import pytest

from neuraldae import cases
from neuraldae.colloc import CollocationScheme, transcribe
from neuraldae.errors import OutOfHorizon
from neuraldae.sim import NonConverged, make_observations, march, simulate_truth

from conftest import decay_model

TANK_X0 = [[10.0, 8.0, 8.0, 1.6], [4.5, 5.0, 5.0, 2.3], [9.0, 10.0, 10.0, 1.5]]


class TestSimulateTruth:
    def test_decay(self):
        truth = simulate_truth(decay_model(), 20)
        assert truth.states(0, [1.0])[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert truth.refinement_error <= 1e-7

    @pytest.mark.parametrize("profiles", ["train", "eval"])
    def test_tank_volume_conserved(self, profiles):
        params = cases.TankParams(profiles=profiles)
        truth = simulate_truth(cases.build_tank(TANK_X0, params=params, mode="truth"), 40)
        t = np.linspace(0, 10, 201)
        for r in range(3):
            vol = cases.tank_volume(params, truth.states(r, t))
            assert np.max(np.abs(vol - vol[0])) <= 1e-6

    def test_population_fixed_point_is_constant(self):
        p = cases.PopulationParams()
        model = cases.build_population([p.fixed_point], horizon=(0, 30), mode="truth")
        truth = simulate_truth(model, 30)
        x = truth.states(0, np.linspace(0, 30, 121))
        assert np.max(np.abs(x - np.array(p.fixed_point))) <= 1e-9

    @pytest.mark.parametrize(
        "build, x0, n_fe",
        [
            (cases.build_tank, TANK_X0, 40),
            (cases.build_population, [[0.3, 0.5]], 60),
            (cases.build_fedbatch, [[0.5, 0.0, 8.0, 1.0], [1.0, 0.0, 5.0, 1.5]], 40),
        ],
        ids=["tank", "population", "fedbatch"],
    )
    def test_doubling_check_passes_for_shipped_cases(self, build, x0, n_fe):
        kw = {"horizon": (0, 40)} if build is cases.build_population else {}
        truth = simulate_truth(build(x0, mode="truth", **kw), n_fe)
        assert truth.refinement_error <= 1e-7

    def test_doubling_failure(self):
        with pytest.raises(NonConverged):
            simulate_truth(decay_model(rate=40.0), 2, K=1, max_doublings=1)

    def test_march_matches_ipm(self):
        from neuraldae.ipm import IpmOptions, solve

        m = cases.build_tank(TANK_X0[:1], mode="truth")
        tr = transcribe(m, CollocationScheme(10, 2, m.horizon), mode="known")
        w = march(tr)
        sol = solve(tr, IpmOptions(tol=1e-12), x0=w)
        assert sol.success
        np.testing.assert_allclose(tr.unpack(sol.x)[0], tr.unpack(w)[0], atol=1e-8)


@pytest.fixture(scope="module")
def truth():
    return simulate_truth(cases.build_tank(TANK_X0, mode="truth"), 40)


class TestObservations:
    def test_noiseless_equals_truth(self, truth):
        t = np.linspace(0, 10, 15)
        obs = make_observations(truth, t, ["x0", "x1", "x2"], sigma=0.0)
        for r in range(3):
            x = truth.states(r, t)
            for d in range(3):
                m = (obs.traj == r) & (obs.state == d)
                np.testing.assert_array_equal(obs.value[m], x[:, d])

    def test_same_seed_same_data(self, truth):
        t = np.linspace(0, 10, 15)
        a = make_observations(truth, t, [0, 1], seed=5)
        b = make_observations(truth, t, [0, 1], seed=5)
        np.testing.assert_array_equal(a.value, b.value)
        assert a.seed == 5
        c = make_observations(truth, t, [0, 1], seed=6)
        assert not np.array_equal(a.value, c.value)

    def test_relative_sigma_recorded(self, truth):
        obs = make_observations(truth, [0.0, 10.0], ["x0"], sigma=0.02)
        grid = truth.states(0, np.linspace(0, 10, 401))[:, 0]
        assert obs.sigma[(0, 0)] == pytest.approx(0.02 * np.ptp(grid))

    def test_outside_horizon(self, truth):
        with pytest.raises(OutOfHorizon):
            make_observations(truth, [11.0], ["x0"])

    def test_noise_std(self):
        b = cases.build_fedbatch([[0.0, 0.0, 0.0, 1.0]], params=cases.FedbatchParams(F=0.0), mode="truth")
        truth = simulate_truth(b, 4)
        # X, P and S stay at zero without feed, so the samples are pure noise
        obs = make_observations(truth, np.linspace(0, 20, 1000), ["X"], sigma=0.05, relative=False, seed=3)
        assert 0.045 <= np.std(obs.value) <= 0.055
