import numpy as np
import pytest

from factorial.core.combinatorics import enumerate_subsets
from factorial.core.design import Dosage, design_matrix, sample_assignments
from factorial.core.errors import ParameterError
from factorial.policies.active import (
    AcquisitionOptions,
    ExperimentState,
    Objective,
    _SpectralObjective,
    acquire,
    active_dosage,
    hetero_active_dosage,
    objective_value,
    project_feasible,
)


def treated_state(sigma=None, n=20):
    """p = 1 state whose only round treated every unit"""
    state = ExperimentState(index=enumerate_subsets(1, 1), n_per_round=n)
    state.add_round(design_matrix(np.ones((n, 1), dtype=int), state.index).features, sigma=sigma)
    return state


class TestAcquisitionOptions:

    def test_objective_from_string(self):
        assert AcquisitionOptions(objective="min_eig_proxy").objective is Objective.MIN_EIG_PROXY

    @pytest.mark.parametrize("kwargs", [{"restarts": 0}, {"max_iters": 0}, {"tol": 0.0}, {"budget": -1.0}])
    def test_rejects_bad_settings(self, kwargs):
        with pytest.raises(ParameterError):
            AcquisitionOptions(**kwargs)

    def test_proxy_for_large_p(self):
        assert AcquisitionOptions.default_for(15).objective is Objective.MIN_EIG_PROXY
        assert AcquisitionOptions.default_for(5).objective is Objective.EIGEN_SUM

    def test_overrides_skip_none(self):
        opts = AcquisitionOptions.default_for(5, budget=None, restarts=2)
        assert opts.budget is None
        assert opts.restarts == 2


class TestExperimentState:

    def test_accumulates_scaled_gram(self):
        state = treated_state(n=10)
        np.testing.assert_allclose(state.P, np.ones((2, 2)))
        assert state.rounds == 1
        assert state.round_sigmas == [None]

    def test_round_noise_weights(self):
        np.testing.assert_allclose(treated_state(sigma=2.0).P, np.full((2, 2), 0.25))

    def test_rejects_wrong_width(self):
        state = ExperimentState(index=enumerate_subsets(2, 1), n_per_round=5)
        with pytest.raises(ParameterError):
            state.add_round(np.ones((5, 2)))

    def test_rejects_non_positive_noise(self):
        state = ExperimentState(index=enumerate_subsets(1, 1), n_per_round=5)
        with pytest.raises(ParameterError):
            state.add_round(np.ones((5, 2)), sigma=0.0)

    def test_rejects_bad_prior_shape(self):
        with pytest.raises(ParameterError):
            ExperimentState(index=enumerate_subsets(2, 1), n_per_round=5, P=np.zeros((2, 2)))


class TestProjectFeasible:

    def test_box(self):
        np.testing.assert_array_equal(project_feasible(np.array([-0.2, 1.3, 0.4])), [0.0, 1.0, 0.4])

    def test_budget(self):
        np.testing.assert_allclose(project_feasible(np.array([0.9, 0.9, 0.9]), 1.5), [0.5, 0.5, 0.5])

    def test_feasible_point_unchanged(self):
        v = np.array([0.1, 0.3, 0.2])
        np.testing.assert_array_equal(project_feasible(v, 1.0), v)

    def test_budget_keeps_ordering(self):
        x = project_feasible(np.array([1.4, 0.6, 0.1]), 1.0)
        assert x.sum() == pytest.approx(1.0)
        assert x[0] >= x[1] >= x[2] >= 0.0


class TestSpectralObjective:

    @pytest.mark.parametrize("objective", list(Objective))
    def test_gradient_matches_finite_differences(self, objective):
        rng = np.random.default_rng(3)
        index = enumerate_subsets(4, 2)
        A = rng.normal(size=(index.K, index.K))
        fn = _SpectralObjective(index, 0.1 * A @ A.T + 0.5 * np.eye(index.K), objective, scale=1.5)
        d = rng.uniform(0.2, 0.8, size=4)
        _, grad = fn.value_and_grad(d)
        h = 1e-6
        numeric = np.array([(fn.value(d + h * e) - fn.value(d - h * e)) / (2 * h) for e in np.eye(4)])
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)

    def test_singular_is_infinite(self):
        index = enumerate_subsets(2, 1)
        fn = _SpectralObjective(index, np.zeros((3, 3)), Objective.EIGEN_SUM)
        assert fn.value(np.ones(2)) == np.inf


class TestAcquire:

    def test_empty_prior_returns_half(self):
        state = ExperimentState(index=enumerate_subsets(3, 1), n_per_round=10)
        result = acquire(state, AcquisitionOptions(restarts=1), np.random.default_rng(0))
        assert result.dosage.d.tolist() == [0.5, 0.5, 0.5]
        assert result.objective == pytest.approx(4.0)
        assert result.converged

    def test_half_is_the_unique_minimiser_without_prior(self):
        state = ExperimentState(index=enumerate_subsets(4, 2), n_per_round=10)
        opts = AcquisitionOptions()
        at_half = objective_value(Dosage.half(4), state, opts)
        assert at_half == pytest.approx(state.index.K)
        rng = np.random.default_rng(10)
        for _ in range(10 ** 3):
            assert objective_value(rng.random(4), state, opts) > at_half

    def test_multistart_near_half(self):
        state = ExperimentState(index=enumerate_subsets(3, 2), n_per_round=10)
        result = acquire(state, AcquisitionOptions(restarts=4), np.random.default_rng(1))
        assert len(result.restart_objectives) == 4
        assert result.objective == pytest.approx(7.0, abs=1e-6)
        assert result.objective == min(result.restart_objectives)

    def test_complements_skewed_prior(self):
        result = acquire(treated_state(), AcquisitionOptions(restarts=3), np.random.default_rng(2))
        assert result.dosage.d[0] <= 1e-3

    def test_balanced_prior_keeps_half(self):
        index = enumerate_subsets(3, 2)
        n = 5000
        state = ExperimentState(index=index, n_per_round=n)
        x = sample_assignments(Dosage.half(3), n, np.random.default_rng(4))
        state.add_round(design_matrix(x, index).features)
        dosage = active_dosage(state, AcquisitionOptions(restarts=3), seed=5)
        assert dosage.linf_distance(Dosage.half(3)) < 0.05

    def test_budget_respected(self):
        state = ExperimentState(index=enumerate_subsets(4, 1), n_per_round=10)
        opts = AcquisitionOptions(restarts=3, budget=1.0)
        result = acquire(state, opts, np.random.default_rng(6))
        assert result.dosage.d.sum() <= 1.0 + 1e-9
        assert result.objective <= objective_value(Dosage.uniform(4, 0.25), state, opts) + 1e-6

    def test_seeded(self):
        state = treated_state()
        opts = AcquisitionOptions(restarts=4)
        first = active_dosage(state, opts, seed=9)
        second = active_dosage(state, opts, seed=9)
        np.testing.assert_array_equal(first.d, second.d)


class TestHeteroActiveDosage:

    OPTS = AcquisitionOptions(restarts=3, tol=1e-12, max_iters=1000)

    @pytest.mark.parametrize("sigma_1, expected", [(2.0, 0.375), (1.5, 0.2778), (1.2, 0.1528)])
    def test_closed_form_single_treatment(self, sigma_1, expected):
        # optimum 2 d* - 1 = -1 / sigma_1^2 with sigma_T = 1
        dosage = hetero_active_dosage(treated_state(sigma=sigma_1), 1.0, self.OPTS, seed=0)
        assert dosage.d[0] == pytest.approx(expected, abs=2e-3)

    def test_noisier_history_asks_for_less_correction(self):
        values = [hetero_active_dosage(treated_state(sigma=s), 1.0, self.OPTS).d[0] for s in (2.0, 1.5, 1.2)]
        assert values[0] > values[1] > values[2]

    def test_equal_noise_matches_unweighted(self):
        index = enumerate_subsets(3, 1)
        x = sample_assignments(Dosage(np.array([0.8, 0.3, 0.6])), 40, np.random.default_rng(7))
        features = design_matrix(x, index).features
        plain = ExperimentState(index=index, n_per_round=40)
        plain.add_round(features)
        weighted = ExperimentState(index=index, n_per_round=40)
        weighted.add_round(features, sigma=2.0)
        np.testing.assert_allclose(
            hetero_active_dosage(weighted, 2.0, self.OPTS, seed=1).d,
            active_dosage(plain, self.OPTS, seed=1).d,
            atol=1e-4,
        )

    @pytest.mark.parametrize("sigma_T", [0.5, 1.0, 3.0])
    def test_no_history_returns_half(self, sigma_T):
        state = ExperimentState(index=enumerate_subsets(3, 1), n_per_round=10)
        dosage = hetero_active_dosage(state, sigma_T, AcquisitionOptions(restarts=3), seed=2)
        assert dosage.linf_distance(Dosage.half(3)) <= 1e-3

    def test_rejects_non_positive_noise(self):
        with pytest.raises(ParameterError):
            hetero_active_dosage(treated_state(), 0.0)
