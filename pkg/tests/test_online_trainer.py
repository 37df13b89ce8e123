import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.core.data_io import DatasetBundle, TaskDataset
from src.core.errors import ConfigError, TrainingError
from src.mkl.joint_trainer import TrainConfig
from src.mkl.kernel_bank import KernelSpec, build_bank, diagonal_trace, kernel_eval
from src.mkl.online_trainer import (SIGN, OnlineState, PairExample, StageOneResult, decode_pair, fit_online,
                                    is_mistake, make_pair_example, online_stage_one, online_stage_two,
                                    online_step, pair_hinge_loss)
from src.mkl.relationship import update_relationship

Z = np.array([0.1, 0.2, 0.3])


def _state(Omega, B=None):
    T = Omega.shape[0]
    return OnlineState(B=np.zeros((3, T)) if B is None else B, Omega=Omega)


class TestOnlineStep:
    def test_mistake_moves_own_column(self):
        state = online_step(_state(np.eye(4) / 4), PairExample(Z, 1.0, 1), mu=2.0, omega_period=1000)
        assert_allclose(state.B[:, 1], Z / (2.0 * 4))
        assert_array_equal(np.delete(state.B, 1, axis=1), 0.0)
        assert state.mistakes == 1
        assert state.round == 1

    def test_uniform_relationship_moves_every_column(self):
        state = online_step(_state(np.full((4, 4), 0.25)), PairExample(Z, 1.0, 2), mu=1.0, omega_period=1000)
        for t in range(4):
            assert_allclose(state.B[:, t], Z / 4)

    def test_doubling_mu_halves_update(self):
        ex = PairExample(Z, 1.0, 0)
        small = online_step(_state(np.eye(3) / 3), ex, mu=1.0, omega_period=1000)
        large = online_step(_state(np.eye(3) / 3), ex, mu=2.0, omega_period=1000)
        assert_allclose(large.B, 0.5 * small.B)

    def test_no_mistake_keeps_weights(self):
        B = np.zeros((3, 2))
        B[:, 0] = 10.0
        state = online_step(_state(np.eye(2) / 2, B), PairExample(Z, 1.0, 0), mu=1.0, omega_period=1)
        assert_array_equal(state.B, B)
        assert state.mistakes == 0
        assert state.round == 1

    def test_negative_step_is_clipped(self):
        state = online_step(_state(np.eye(2) / 2), PairExample(Z, -1.0, 0), mu=1.0, omega_period=1)
        assert_array_equal(state.B, 0.0)
        assert state.mistakes == 1
        # B is still zero, so Omega is not refreshed
        assert_array_equal(state.Omega, np.eye(2) / 2)

    def test_omega_refreshed_on_period(self):
        state = _state(np.full((2, 2), 0.5))
        state = online_step(state, PairExample(Z, 1.0, 0), mu=1.0, omega_period=1)
        assert_allclose(state.Omega, update_relationship(state.B))
        assert np.trace(state.Omega) == pytest.approx(1.0)

    def test_predicates(self):
        assert is_mistake(1.0, 0.5)
        assert not is_mistake(1.0, 0.5, SIGN)
        assert is_mistake(-1.0, 0.5, SIGN)
        assert not is_mistake(1.0, 1.0)


def test_decode_pair_order():
    assert [decode_pair(m) for m in range(4)] == [(0, 0), (0, 1), (1, 1), (0, 2)]
    assert {decode_pair(m) for m in range(10)} == {(i, j) for j in range(4) for i in range(j + 1)}


def test_make_pair_example(clustered_bundle, poly_specs):
    task = clustered_bundle.tasks[2]
    scales = np.array([[diagonal_trace(s, t.features) for s in poly_specs] for t in clustered_bundle.tasks])
    ex = make_pair_example(clustered_bundle, poly_specs, scales, 2, 3, 7)
    assert ex.task == 2
    assert ex.l == (1.0 if task.labels[3] == task.labels[7] else -1.0)
    for k, spec in enumerate(poly_specs):
        assert ex.z[k] == pytest.approx(kernel_eval(spec, task.features[3], task.features[7], scales[2][k]))


class TestStageOne:
    def test_builds_no_gram(self, monkeypatch, clustered_bundle, poly_specs):
        def forbidden(*args, **kwargs):
            raise AssertionError("gram matrix computed during the online stage")

        monkeypatch.setattr("src.mkl.online_trainer.compute_gram", forbidden)
        monkeypatch.setattr("src.mkl.kernel_bank.compute_gram", forbidden)
        result = online_stage_one(clustered_bundle, poly_specs, R=200, mu=1.0, omega_period=10, seed=0,
                                  check_every=50, check_pairs=20)
        assert np.all(result.B >= 0)
        assert result.mistakes >= 1
        assert [r.outer for r in result.history] == [50, 100, 150, 200]

    def test_deterministic(self, clustered_bundle, poly_specs):
        first = online_stage_one(clustered_bundle, poly_specs, R=100, mu=1.0, omega_period=5, seed=3,
                                 check_pairs=10)
        second = online_stage_one(clustered_bundle, poly_specs, R=100, mu=1.0, omega_period=5, seed=3,
                                  check_pairs=10)
        assert_array_equal(first.B, second.B)
        assert_array_equal(first.Omega, second.Omega)

    def test_relationship_invariants(self, clustered_bundle, poly_specs):
        result = online_stage_one(clustered_bundle, poly_specs, R=300, mu=0.5, omega_period=1, seed=1,
                                  check_pairs=10)
        assert_allclose(result.Omega, result.Omega.T, atol=1e-10)
        assert np.linalg.eigvalsh(result.Omega)[0] >= -1e-8
        assert np.trace(result.Omega) == pytest.approx(1.0, abs=1e-10)

    def test_zero_rounds(self, clustered_bundle, poly_specs):
        with pytest.raises(TrainingError):
            online_stage_one(clustered_bundle, poly_specs, R=0, mu=1.0, omega_period=1, seed=0)

    def test_rejects_regression(self, regression_bundle, poly_specs):
        with pytest.raises(ConfigError):
            online_stage_one(regression_bundle, poly_specs, R=10, mu=1.0, omega_period=1, seed=0)

    def test_pair_hinge_descends_across_seeds(self, clustered_bundle, poly_specs):
        descending = 0
        for seed in range(10):
            result = online_stage_one(clustered_bundle, poly_specs, R=40000, mu=1.0, omega_period=100, seed=seed,
                                      check_every=10000)
            hinge = [r.objective for r in result.history]
            assert len(hinge) == 4
            if all(after <= before + 1e-9 for before, after in zip(hinge, hinge[1:])):
                descending += 1
        assert descending >= 8

    def test_argument_checks(self, clustered_bundle, poly_specs):
        with pytest.raises(ConfigError):
            online_stage_one(clustered_bundle, poly_specs, R=10, mu=0.0, omega_period=1, seed=0)
        with pytest.raises(ConfigError):
            online_stage_one(clustered_bundle, poly_specs, R=10, mu=1.0, omega_period=0, seed=0)
        with pytest.raises(ConfigError):
            online_stage_one(clustered_bundle, poly_specs, R=10, mu=1.0, omega_period=1, seed=0,
                             predicate="always")


class TestPairHingeLoss:
    def test_zero_weights(self, clustered_bundle, poly_specs):
        assert pair_hinge_loss(clustered_bundle, poly_specs, np.zeros((3, 4)), 0) == pytest.approx(1.0)

    def test_matches_brute_force(self, rng):
        X = rng.normal(size=(5, 2))
        y = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
        bundle = DatasetBundle((TaskDataset(0, X, y),))
        specs = [KernelSpec("linear"), KernelSpec("rbf", bandwidth=1.0)]
        beta = np.array([[0.7], [2.0]])
        scales = [diagonal_trace(s, X) for s in specs]
        losses = []
        for j in range(5):
            for i in range(j + 1):
                value = sum(beta[k, 0] * kernel_eval(s, X[i], X[j], scales[k]) for k, s in enumerate(specs))
                l = 1.0 if y[i] == y[j] else -1.0
                losses.append(max(0.0, 1.0 - l * value))
        assert pair_hinge_loss(bundle, specs, beta, 0) == pytest.approx(np.mean(losses))


class TestStageTwo:
    def test_empty_column_gets_mean(self, clustered_bundle, clustered_bank):
        B = np.array([[0.2, 0.0, 0.4, 0.6], [0.1, 0.0, 0.1, 0.1], [0.3, 0.0, 0.2, 0.1]])
        stage_one = StageOneResult(B, np.eye(4) / 4, 5, ())
        model = online_stage_two(clustered_bank, clustered_bundle.labels, stage_one, TrainConfig())
        assert_allclose(model.B[:, 1], [0.4, 0.1, 0.2])
        assert_array_equal(stage_one.B[:, 1], 0.0)
        assert model.algorithm == "mkmtrl_online"

    def test_fit_online(self, clustered_bundle, poly_specs):
        model = fit_online(clustered_bundle, poly_specs, R=200, mu=1.0, omega_period=10, seed=0,
                           cfg=TrainConfig(C=1.0), check_pairs=10)
        assert model.B.shape == (3, 4)
        assert len(model.models) == 4
        assert np.all(model.B >= 0)
        bank = build_bank(clustered_bundle, poly_specs, clustered_bundle)
        assert bank.trace_scales().shape == model.trace_scales.shape
