import numpy as np
import pytest
import scipy.linalg as sla

from fdialab.estimator import (EstimatorState, dare_residual, kalman_step, riccati_map, solve_dare,
                               steady_state_gains)
from fdialab.plant import PlantModel, PlantState, draw_noise, plant_step


def test_matches_scipy_dare(model, gains):
    # filter DARE is the dual of the control one
    P = sla.solve_discrete_are(model.A.T, model.C.T, model.Q, model.R)
    np.testing.assert_allclose(gains.P, P, rtol=1e-7, atol=1e-18)
    assert dare_residual(gains, model.A, model.C, model.Q, model.R) <= 1e-10 * np.linalg.norm(gains.P)


def test_gain_and_innovation_covariance(model, gains):
    S = model.C @ gains.P @ model.C.T + model.R
    np.testing.assert_allclose(gains.Sigma, S, rtol=1e-12)
    L = model.A @ gains.P @ model.C.T @ np.linalg.inv(S)
    np.testing.assert_allclose(gains.L, L, rtol=1e-8, atol=1e-14)
    np.testing.assert_allclose(gains.Sigma_chol @ gains.Sigma_chol.T, gains.Sigma, rtol=1e-12)
    assert np.linalg.eigvalsh(gains.P).min() > 0


def test_error_dynamics_stable(model, gains):
    rho = max(abs(np.linalg.eigvals(model.A - gains.L @ model.C)))
    assert rho < 1


def test_per_joint_solution_equals_full_iteration():
    m = PlantModel.double_integrator(n=2, u_max=1.0)
    full = solve_dare(m.A, m.C, m.Q, m.R)
    blk = steady_state_gains(m)
    np.testing.assert_allclose(blk.P, full.P, rtol=1e-9, atol=1e-20)


def test_zero_process_noise_stable_system():
    A = 0.5 * np.eye(2)
    g = solve_dare(A, np.eye(2), np.zeros((2, 2)), np.eye(2))
    np.testing.assert_allclose(g.P, 0.0, atol=1e-300)


def test_riccati_fixed_point(model, gains):
    P1 = riccati_map(gains.P, model.A, model.C, model.Q, model.R)
    np.testing.assert_allclose(P1, gains.P, rtol=1e-9, atol=1e-20)


def test_kalman_step_formula(model, gains):
    rng = np.random.default_rng(2)
    x_hat = rng.standard_normal(14)
    u = rng.standard_normal(7)
    y = rng.standard_normal(14)
    est = kalman_step(EstimatorState(x_hat), gains, u, y, model)
    r = y - x_hat
    np.testing.assert_allclose(est.last_innovation, r)
    np.testing.assert_allclose(est.x_hat, model.A @ x_hat + model.B @ u + gains.L @ r)


def test_innovation_covariance_monte_carlo(model, gains):
    rng = np.random.default_rng(3)
    x = PlantState(np.zeros(14))
    est = EstimatorState(np.zeros(14))
    R = []
    for k in range(12_000):
        w, v = draw_noise(model, rng)
        y = model.C @ x.x + v
        est = kalman_step(est, gains, np.zeros(7), y, model)
        x = plant_step(x, np.zeros(7), model, w=w)
        if k >= 2000:
            R.append(est.last_innovation)
    R = np.array(R)
    S = R.T @ R / len(R)
    assert np.linalg.norm(S - gains.Sigma) / np.linalg.norm(gains.Sigma) < 0.1


def test_whiten(gains):
    r = np.arange(14.0)
    s = gains.whiten(r)
    assert s @ s == pytest.approx(r @ np.linalg.solve(gains.Sigma, r), rel=1e-10)
