import json

import numpy as np
import pytest

from neuraldae import cases
from neuraldae.colloc import CollocationScheme, transcribe
from neuraldae.errors import DimensionMismatch, EmptyHorizon, IndexOutOfRange, TimeOutOfHorizon, UnknownSymbol
from neuraldae.ocp import ContinuousModel, LossSpec, ModelBuilder, ObservationSet, Param, State, Variable
from neuraldae.sim import make_observations, simulate_truth

TANK_X0 = [[10.0, 8.0, 8.0, 1.6], [4.5, 5.0, 5.0, 2.3], [9.0, 10.0, 10.0, 1.5]]


class TestBuildModel:
    def test_tank_layout(self):
        m = cases.build_tank(TANK_X0)
        assert (m.n_x, m.n_y, m.n_z) == (4, 3, 2)
        assert m.n_y + m.n_z == 5
        assert m.algebraic.n_out == 3
        assert m.n_traj == 3

    def test_population_with_lyapunov(self):
        m = cases.build_population([[0.3, 0.5]], with_lyapunov=True)
        assert (m.n_x, m.n_z, m.n_path) == (3, 1, 1)

    def test_dynamics_count_mismatch(self):
        b = ModelBuilder([State("x", (1.0,)), State("v", (0.0,))])
        with pytest.raises(DimensionMismatch):
            b.build([b["v"]], (0.0, 1.0))

    def test_unknown_symbol(self):
        b = ModelBuilder([State("x", (1.0,))])
        with pytest.raises(UnknownSymbol):
            b["y"]

    @pytest.mark.parametrize("horizon", [(1.0, 1.0), (2.0, 1.0)])
    def test_empty_horizon(self, horizon):
        b = ModelBuilder([State("x", (1.0,))])
        with pytest.raises(EmptyHorizon):
            b.build([-b["x"]], horizon)

    def test_duplicate_names(self):
        with pytest.raises(DimensionMismatch):
            b = ModelBuilder([State("x", (1.0,))], closures=[Variable("x")])
            b.build([b["x"]], (0.0, 1.0))

    def test_ragged_initial_states(self):
        b = ModelBuilder([State("x", (1.0, 2.0)), State("v", (0.0,))])
        with pytest.raises(DimensionMismatch):
            b.build([b["v"], -b["x"]], (0.0, 1.0))

    def test_algebraics_need_equations(self):
        b = ModelBuilder([State("x", (1.0,))], algebraics=[Variable("y")])
        with pytest.raises(DimensionMismatch):
            b.build([b["y"]], (0.0, 1.0))

    def test_network_inputs_default_to_states(self):
        b = ModelBuilder([State("x", (1.0,)), State("v", (0.0,))], closures=[Variable("z")])
        m = b.build([b["v"], b["z"]], (0.0, 1.0))
        assert m.network_inputs == (0, 1)

    def test_with_initial_states(self):
        m = cases.build_tank(TANK_X0).with_initial_states([[1.0, 2.0, 2.0, 3.0]])
        assert m.n_traj == 1
        np.testing.assert_array_equal(m.x0(0), [1.0, 2.0, 2.0, 3.0])
        with pytest.raises(IndexOutOfRange):
            m.x0(1)


class TestSerialization:
    @pytest.mark.parametrize(
        "model",
        [
            cases.build_tank(TANK_X0, mode="truth"),
            cases.build_population([[0.3, 0.5]], with_lyapunov=True),
            cases.build_fedbatch([[0.5, 0.0, 8.0, 1.0]]),
        ],
        ids=["tank", "population", "fedbatch"],
    )
    def test_round_trip(self, model):
        text = json.dumps(model.to_dict())
        back = ContinuousModel.from_dict(json.loads(text))
        assert back.to_dict() == model.to_dict()
        w = np.random.default_rng(0).uniform(0.5, 2.0, model.n_local)
        np.testing.assert_array_equal(back.dynamics.eval(w), model.dynamics.eval(w))

    def test_free_param_and_bounds_survive(self):
        b = ModelBuilder([State("x", (1.0,), lower=0.0)], params=[Param("k", 2.0, free=True, lower=0.0, upper=5.0)])
        m = b.build([-b["k"] * b["x"]], (0.0, 1.0))
        back = ContinuousModel.from_dict(m.to_dict())
        assert back.params[0] == m.params[0]
        assert back.states[0].lower == 0.0 and back.states[0].upper == np.inf


class TestObservations:
    def _obs(self, t, state=0, traj=0):
        return ObservationSet([traj], [state], [t], [1.0])

    def test_tank_three_observed_states(self):
        m = cases.build_tank(TANK_X0)
        t = np.linspace(0, 10, 5)
        n = t.size
        obs = ObservationSet(
            np.repeat(np.arange(3), 3 * n), np.tile(np.repeat([0, 1, 2], n), 3), np.tile(t, 9), np.ones(9 * n)
        )
        assert obs.validate(m) is obs
        assert 3 not in set(obs.state.tolist())

    def test_final_time_is_valid(self):
        m = cases.build_tank(TANK_X0)
        self._obs(10.0).validate(m)

    def test_after_horizon(self):
        m = cases.build_tank(TANK_X0)
        with pytest.raises(TimeOutOfHorizon):
            self._obs(11.0).validate(m)

    @pytest.mark.parametrize("state, traj", [(4, 0), (0, 3), (-1, 0)])
    def test_bad_indices(self, state, traj):
        m = cases.build_tank(TANK_X0)
        with pytest.raises(IndexOutOfRange):
            self._obs(1.0, state, traj).validate(m)

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ObservationSet([0, 0], [0], [1.0], [1.0])

    def test_noise_variance_sum(self):
        obs = ObservationSet([0, 0, 1], [0, 0, 1], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0], {(0, 0): 0.1, (1, 1): 0.2})
        assert obs.noise_variance_sum() == pytest.approx(2 * 0.01 + 0.04)


class TestLoss:
    def test_noiseless_truth_has_zero_loss(self):
        truth = simulate_truth(cases.build_tank(TANK_X0, mode="truth"), 40)
        obs = make_observations(truth, np.linspace(0, 10, 7), ["x0", "x1", "x2"], sigma=0.0)
        tr = transcribe(truth.model, truth.scheme, obs, mode="known")
        assert tr.data_loss(truth.w) == 0.0

    def test_regularization_weight(self):
        assert LossSpec(lambda_r=2.0).lambda_r == 2.0
        m = cases.build_tank(TANK_X0)
        tr = transcribe(m, CollocationScheme(4, 2, m.horizon), mode="free")
        assert tr.regularization(tr.x_init) == 0.0
