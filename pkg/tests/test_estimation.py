import numpy as np
import pytest

from adaptive_lqr import (
    CorrelationState,
    EstimateNotStabilizable,
    IllConditioned,
    NonFiniteInput,
    PlantModel,
    batch_correlations,
    data_riccati_residual,
    disturbance_correlation,
    estimate_model,
    initial_correlation,
    q_from_p,
    rho_of,
    solve_dare,
    solve_data_riccati,
    update_correlations,
)
from conftest import random_history, random_stabilizable_plant, scalar_k, scalar_p


def make_state(sigma, sigma_hat, lam=0.99, sigma0=None, t=1):
    sigma = np.asarray(sigma, dtype=float)
    if sigma0 is None:
        sigma0 = 1e-3 * np.eye(sigma.shape[0])
    return CorrelationState(sigma=sigma, sigma_hat=np.asarray(sigma_hat, dtype=float),
                            lam=lam, sigma0=sigma0, t=t)


class TestUpdateCorrelations:
    def test_single_point_no_forgetting(self):
        state = initial_correlation(1, 1, lam=1.0, sigma0=np.eye(2))
        out = update_correlations(state, [1.0], [0.0], [0.3])
        assert np.allclose(out.sigma, [[2.0, 0.0], [0.0, 1.0]], atol=1e-15)
        assert out.t == 1

    def test_single_step_hand_computation(self):
        state = initial_correlation(1, 1, lam=0.5, sigma0=np.eye(2))
        out = update_correlations(state, [1.0], [0.0], [0.5])
        assert np.allclose(out.sigma, [[1.5, 0.0], [0.0, 0.5]], atol=1e-15)
        assert np.allclose(out.sigma_hat, [[0.5, 0.0]], atol=1e-15)

    def test_zero_data_point_only_decays(self):
        state = make_state([[2.0, 0.1], [0.1, 1.0]], [[0.4, 0.2]], lam=0.7)
        out = update_correlations(state, [0.0], [0.0], [0.0])
        assert np.allclose(out.sigma, 0.7 * state.sigma, atol=1e-15)
        assert np.allclose(out.sigma_hat, 0.7 * state.sigma_hat, atol=1e-15)

    def test_non_finite_rejected(self):
        state = initial_correlation(1, 1)
        with pytest.raises(NonFiniteInput):
            update_correlations(state, [np.nan], [0.0], [0.0])

    def test_initial_conditions(self):
        state = initial_correlation(2, 1, lam=0.9)
        assert np.array_equal(state.sigma, state.sigma0)
        assert np.array_equal(state.sigma_hat, np.zeros((2, 3)))
        assert state.t == 0


class TestBatchCorrelations:
    def test_empty_history(self):
        out = batch_correlations([], 0.9, np.eye(3), n=2)
        assert np.array_equal(out.sigma, np.eye(3))
        assert np.array_equal(out.sigma_hat, np.zeros((2, 3)))
        assert out.t == 0

    def test_single_step_matches_update(self):
        state = initial_correlation(1, 1, lam=0.5, sigma0=np.eye(2))
        rec = update_correlations(state, [1.0], [0.0], [0.5])
        bat = batch_correlations([([1.0], [0.0], [0.5])], 0.5, np.eye(2))
        assert np.allclose(rec.sigma, bat.sigma, atol=1e-15)
        assert np.allclose(rec.sigma_hat, bat.sigma_hat, atol=1e-15)

    def test_two_step_hand_values(self):
        # Noiseless run of x+ = 0.5 x + u from x0 = 1: (1, 0) -> 0.5, (0.5, 1) -> 1.25.
        history = [([1.0], [0.0], [0.5]), ([0.5], [1.0], [1.25])]
        out = batch_correlations(history, 1.0, 1e-6 * np.eye(2))
        expected_sigma = np.array([[1.25, 0.5], [0.5, 1.0]]) + 1e-6 * np.eye(2)
        assert np.allclose(out.sigma, expected_sigma, atol=1e-12)
        assert np.allclose(out.sigma_hat, [[1.125, 1.25]], atol=1e-12)

    def test_fold_equivalence_200_histories(self):
        rng = np.random.default_rng(101)
        lams = [0.5, 0.9, 0.99, 1.0]
        for i in range(200):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 4))
            lam = lams[i % 4]
            length = int(rng.integers(1, 51))
            sigma0 = np.eye(n + m) * rng.uniform(1e-3, 1.0)
            history = random_history(rng, n, m, length)
            folded = initial_correlation(n, m, lam=lam, sigma0=sigma0)
            for x, u, xn in history:
                folded = update_correlations(folded, x, u, xn)
            batch = batch_correlations(history, lam, sigma0)
            scale = np.linalg.norm(batch.sigma, 2)
            assert np.linalg.norm(folded.sigma - batch.sigma, 2) <= 1e-9 * scale
            assert np.linalg.norm(folded.sigma_hat - batch.sigma_hat, 2) <= 1e-9 * max(
                1.0, np.linalg.norm(batch.sigma_hat, 2))
            # Positive definiteness along the history endpoint.
            assert np.linalg.eigvalsh(batch.sigma).min() >= \
                lam**length * np.linalg.eigvalsh(sigma0).min() - 1e-12


class TestEstimateModel:
    def test_zero_sigma_hat(self):
        est = estimate_model(initial_correlation(2, 1))
        assert np.array_equal(est.a_hat, np.zeros((2, 2)))
        assert np.array_equal(est.b_hat, np.zeros((2, 1)))

    def test_two_step_recovery(self):
        history = [([1.0], [0.0], [0.5]), ([0.5], [1.0], [1.25])]
        out = batch_correlations(history, 1.0, 1e-6 * np.eye(2))
        est = estimate_model(out)
        assert abs(est.a_hat[0, 0] - 0.5) < 1e-5
        assert abs(est.b_hat[0, 0] - 1.0) < 1e-5

    def test_consistent_system_exact_recovery(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 4))
            ab = rng.standard_normal((n, n + m))
            G = rng.standard_normal((n + m, n + m))
            sigma = G @ G.T + 0.5 * np.eye(n + m)
            state = make_state(sigma, ab @ sigma)
            est = estimate_model(state)
            got = np.hstack([est.a_hat, est.b_hat])
            assert np.linalg.norm(got - ab, 2) <= 1e-10
            # Solve residual of the defining linear system.
            resid = np.linalg.norm(got @ sigma - state.sigma_hat, 2)
            assert resid <= 1e-10 * max(1.0, np.linalg.norm(state.sigma_hat, 2))

    def test_ill_conditioned(self):
        state = make_state(np.diag([1.0, 1e-16]), np.zeros((1, 2)))
        with pytest.raises(IllConditioned):
            estimate_model(state)


class TestSolveDataRiccati:
    def test_no_data_identity(self):
        q, k = solve_data_riccati(initial_correlation(1, 1))
        assert np.allclose(q.Q, np.eye(2), atol=1e-12)
        assert np.array_equal(k.K, np.zeros((1, 1)))

    def test_two_step_scalar_values(self):
        history = [([1.0], [0.0], [0.5]), ([0.5], [1.0], [1.25])]
        state = batch_correlations(history, 1.0, 1e-6 * np.eye(2))
        q, k = solve_data_riccati(state, tol=1e-12)
        p = scalar_p(0.5, 1.0)
        expected_q = np.eye(2) + p * np.outer([0.5, 1.0], [0.5, 1.0])
        assert np.allclose(q.Q, expected_q, atol=1e-4)
        assert abs(k.K[0, 0] - scalar_k(0.5, 1.0, p)) < 1e-4
        assert abs(k.K[0, 0] - (-0.2656)) < 1e-3

    def test_consistent_correlations_match_true_plant(self):
        plant = PlantModel([[1.0]], [[1.0]])
        rng = np.random.default_rng(12)
        G = rng.standard_normal((2, 2))
        sigma = G @ G.T + 0.3 * np.eye(2)
        state = make_state(sigma, plant.ab @ sigma)
        q, k = solve_data_riccati(state, tol=1e-12)
        q_true = q_from_p(plant, solve_dare(plant, tol=1e-12))
        assert np.allclose(q.Q, q_true.Q, atol=1e-9)
        assert abs(k.K[0, 0] - (-0.6180)) < 1e-4

    def test_unstabilizable_estimate(self):
        sigma = np.eye(2)
        state = make_state(sigma, np.array([[2.0, 0.0]]) @ sigma)
        with pytest.raises(EstimateNotStabilizable):
            solve_data_riccati(state)

    def test_residual_small_on_random_states(self):
        rng = np.random.default_rng(2)
        count = 0
        while count < 100:
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 4))
            plant = random_stabilizable_plant(rng, n, m)
            G = rng.standard_normal((n + m, n + m))
            sigma = G @ G.T + rng.uniform(0.1, 1.0) * np.eye(n + m)
            state = make_state(sigma, plant.ab @ sigma + 0.05 * rng.standard_normal((n, n + m)))
            try:
                q, _ = solve_data_riccati(state)
            except EstimateNotStabilizable:
                continue
            assert data_riccati_residual(state, q) <= 1e-8
            count += 1


class TestDisturbanceCorrelation:
    def test_regularizer_term_only(self):
        plant = PlantModel([[0.5]], [[1.0]])
        out = disturbance_correlation([([1.0], [0.0], [0.0])], plant, 0.5, np.eye(2))
        assert np.allclose(out.stacked, [[-0.25, -0.5]], atol=1e-15)

    def test_vanishing_regularizer(self):
        plant = PlantModel([[0.5]], [[1.0]])
        history = [([1.0], [0.2], [0.0]), ([0.4], [-0.1], [0.0])]
        out = disturbance_correlation(history, plant, 0.9, 1e-14 * np.eye(2))
        assert np.linalg.norm(out.stacked, 2) <= 1e-13

    def test_single_disturbance_term(self):
        plant = PlantModel([[0.5]], [[1.0]])
        out = disturbance_correlation([([1.0], [0.0], [1.0])], plant, 1.0, np.zeros((2, 2)))
        assert np.allclose(out.stacked, [[1.0, 0.0]], atol=1e-15)

    def test_identity_against_batch_on_200_histories(self):
        rng = np.random.default_rng(303)
        lams = [0.5, 0.9, 0.99, 1.0]
        for i in range(200):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 4))
            lam = lams[i % 4]
            length = int(rng.integers(1, 51))
            plant = PlantModel(rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, m)))
            sigma0 = np.eye(n + m) * rng.uniform(1e-3, 1.0)
            xuw = [(rng.standard_normal(n), rng.standard_normal(m), rng.standard_normal(n))
                   for _ in range(length)]
            xux = [(x, u, plant.A @ x + plant.B @ u + w) for x, u, w in xuw]
            corr = batch_correlations(xux, lam, sigma0)
            dist = disturbance_correlation(xuw, plant, lam, sigma0)
            expected = corr.sigma_hat - plant.ab @ corr.sigma
            scale = max(1.0, np.linalg.norm(expected, 2))
            assert np.linalg.norm(dist.stacked - expected, 2) <= 1e-10 * scale


class TestRhoOf:
    def test_consistent_data_zero(self):
        plant = PlantModel([[0.7]], [[0.4]])
        rng = np.random.default_rng(4)
        G = rng.standard_normal((2, 2))
        sigma = G @ G.T + 0.2 * np.eye(2)
        state = make_state(sigma, plant.ab @ sigma)
        assert rho_of(state, plant) <= 1e-12

    def test_two_step_small_regularizer(self):
        plant = PlantModel([[0.5]], [[1.0]])
        history = [([1.0], [0.0], [0.5]), ([0.5], [1.0], [1.25])]
        state = batch_correlations(history, 1.0, 1e-6 * np.eye(2))
        assert rho_of(state, plant) <= 1e-5

    def test_constructed_offset(self):
        plant = PlantModel([[0.5]], [[1.0]])
        rng = np.random.default_rng(9)
        G = rng.standard_normal((2, 2))
        sigma = G @ G.T + 0.2 * np.eye(2)
        delta = rng.standard_normal((1, 2))
        delta *= 0.1 / np.linalg.norm(delta, 2)
        state = make_state(sigma, (plant.ab + delta) @ sigma)
        assert abs(rho_of(state, plant) - 0.1) < 1e-10

    def test_equals_disturbance_correlation_ratio(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 4))
            plant = PlantModel(rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, m)))
            lam = 0.95
            sigma0 = 0.01 * np.eye(n + m)
            xuw = [(rng.standard_normal(n), rng.standard_normal(m),
                    0.1 * rng.standard_normal(n)) for _ in range(10)]
            xux = [(x, u, plant.A @ x + plant.B @ u + w) for x, u, w in xuw]
            corr = batch_correlations(xux, lam, sigma0)
            dist = disturbance_correlation(xuw, plant, lam, sigma0)
            direct = rho_of(corr, plant)
            via_ratio = np.linalg.norm(
                np.linalg.solve(corr.sigma, dist.stacked.T).T, 2)
            assert abs(direct - via_ratio) <= 1e-9 * max(1.0, direct)
