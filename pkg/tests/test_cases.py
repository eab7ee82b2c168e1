import numpy as np
import pytest
from scipy.integrate import quad

from neuraldae import cases
from neuraldae.colloc import CollocationScheme, transcribe
from neuraldae.errors import InconsistentInitialState, InvalidConfig, NonpositiveVolume
from neuraldae.sim import simulate_truth

TANK_X0 = [[10.0, 8.0, 8.0, 1.6], [4.5, 5.0, 5.0, 2.3], [9.0, 10.0, 10.0, 1.5]]


class TestTank:
    def test_zero_levels_zero_flows(self):
        params = cases.TankParams()
        np.testing.assert_array_equal(cases.tank_closures(params, np.zeros(4)), [0.0, 0.0])
        m = cases.build_tank([[0.0, 0.0, 0.0, 0.0]], mode="truth")
        assert m.closure_eqs.eval(np.zeros(m.n_local))[1] == 0.0
        assert m.algebraic.eval(np.zeros(m.n_local))[2] == 0.0

    def test_inconsistent_levels(self):
        with pytest.raises(InconsistentInitialState):
            cases.build_tank([[10.0, 8.0, 7.0, 1.6]])

    def test_pump_law(self):
        z = cases.tank_closures(cases.TankParams(), [1.0, 0.0, 0.0, 2.0])
        assert z[0] == pytest.approx(0.2, abs=1e-16)

    def test_three_algebraic_rows_per_point(self):
        m = cases.build_tank(TANK_X0)
        tr = transcribe(m, CollocationScheme(20, 2, m.horizon), mode="free")
        blk = tr.row_blocks["algebraic"]
        assert blk.stop - blk.start == 3 * 3 * 20 * 2

    def test_truth_and_neural_share_layout(self):
        a = cases.build_tank(TANK_X0, mode="truth")
        b = cases.build_tank(TANK_X0)
        assert [s.name for s in a.states] == [s.name for s in b.states]
        assert [v.name for v in a.algebraics] == [v.name for v in b.algebraics]
        assert [v.name for v in a.closures] == [v.name for v in b.closures]
        assert a.closure_eqs is not None and b.closure_eqs is None

    def test_level_equality_holds_along_truth(self):
        truth = simulate_truth(cases.build_tank(TANK_X0, mode="truth"), 40)
        x = truth.states(0, np.linspace(0, 10, 101))
        assert np.max(np.abs(x[:, 1] - x[:, 2])) <= 1e-8

    def test_eval_profiles(self):
        params = cases.TankParams(profiles="eval")
        # closed form of the integrated area against quadrature
        h = 3.0
        ref = quad(lambda s: np.sqrt(s + 0.1), 0, h)[0] + 0.1 * h + quad(lambda s: s + 0.1, 0, h)[0] + 10 * h
        assert cases.tank_volume(params, [h, h, h, h]) == pytest.approx(ref, rel=1e-12)

    def test_bad_profiles(self):
        with pytest.raises(InvalidConfig):
            cases.TankParams(profiles="other")


class TestPopulation:
    def test_fixed_point_values(self):
        p = cases.PopulationParams()
        den = 0.2 * 0.2 + 0.01 * 0.1
        assert p.fixed_point == pytest.approx((0.2 * 0.01 / den, 0.2 * 0.2 / den), rel=1e-15)

    def test_equilibrium(self):
        p = cases.PopulationParams()
        s0, s1 = p.fixed_point
        z = cases.population_closure(p, [s0, s1])
        assert abs(z) <= 1e-15
        assert abs((p.r1 - p.a1 * s1 - p.b1 * s0) * s0) <= 1e-15
        assert abs(cases.lyapunov_rate(p, s0, s1, z)) <= 1e-14

    def test_lyapunov_minimum_on_grid(self):
        p = cases.PopulationParams()
        s0, s1 = p.fixed_point
        g0, g1 = np.meshgrid(np.linspace(0.5 * s0, 2 * s0, 101), np.linspace(0.5 * s1, 2 * s1, 101))
        assert np.all(cases.lyapunov(p, g0, g1) >= cases.lyapunov(p, s0, s1) - 1e-14)

    def test_lyapunov_decreases_along_truth(self):
        p = cases.PopulationParams()
        truth = simulate_truth(cases.build_population([[0.3, 0.5]], horizon=(0, 40), mode="truth"), 60)
        x = truth.states(0, np.linspace(0, 40, 2001))
        V = cases.lyapunov(p, x[:, 0], x[:, 1])
        assert np.max(np.diff(V)) <= 1e-8

    def test_lyapunov_state_and_path(self):
        m = cases.build_population([[0.3, 0.5]], with_lyapunov=True, mode="truth")
        p = cases.PopulationParams()
        assert m.x0(0)[2] == pytest.approx(cases.lyapunov(p, 0.3, 0.5))
        truth = simulate_truth(m, 60)
        t = np.linspace(0, 30, 61)
        x = truth.states(0, t)
        np.testing.assert_allclose(x[:, 2], cases.lyapunov(p, x[:, 0], x[:, 1]), atol=1e-7)

    def test_start_below_floor(self):
        with pytest.raises(InvalidConfig):
            cases.build_population([[0.0, 0.5]])


class TestFedbatch:
    def test_monod_saturation(self):
        p = cases.FedbatchParams()
        assert cases.monod(p, 1000 * p.K_S) == pytest.approx(p.mu_max, rel=1e-3)
        assert cases.monod(p, 1000 * p.K_S) < p.mu_max

    def test_monod_half_value(self):
        p = cases.FedbatchParams()
        assert cases.monod(p, p.K_S) == p.mu_max / 2

    def test_no_substrate_no_growth(self):
        m = cases.build_fedbatch([[1.0, 0.0, 0.0, 1.0]], params=cases.FedbatchParams(F=0.0), mode="truth")
        x = simulate_truth(m, 4).states(0, np.linspace(0, 20, 11))
        np.testing.assert_allclose(x[:, 0], 1.0, atol=1e-12)

    def test_nonpositive_volume(self):
        with pytest.raises(NonpositiveVolume):
            cases.build_fedbatch([[1.0, 0.0, 5.0, 0.0]])

    def test_volume_linear(self):
        p = cases.FedbatchParams()
        truth = simulate_truth(cases.build_fedbatch([[0.5, 0.0, 8.0, 1.0]], mode="truth"), 40)
        t = np.linspace(0, 20, 81)
        np.testing.assert_allclose(truth.states(0, t)[:, 3], 1.0 + p.F * t, atol=1e-10)

    def test_closure_matches_monod_along_truth(self):
        p = cases.FedbatchParams()
        truth = simulate_truth(cases.build_fedbatch([[0.5, 0.0, 8.0, 1.0]], mode="truth"), 40)
        x, _, z = truth.interpolate(0, truth.scheme.point_times().ravel())
        np.testing.assert_allclose(z[:, 0], cases.monod(p, x[:, 2]), atol=1e-10)
