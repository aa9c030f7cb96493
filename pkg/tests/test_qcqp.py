import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdialab.qcqp import InfeasibleProblem, QcqpProblem, solve

from qcqp_oracle import Ellipsoid, projected_gradient, random_problem, sample_inside


def _kkt(prob, sol):
    return (prob.H + 2 * sol.lam * prob.Qc) @ sol.x + prob.g + sol.lam * prob.q_lin


def test_one_dimensional_hand_solution():
    prob = QcqpProblem(np.eye(1), np.array([-2.0]), np.eye(1), np.zeros(1), -1.0)
    sol = solve(prob)
    assert sol.active
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.lam == pytest.approx(0.5, abs=1e-8)


def test_inactive_returns_unconstrained_minimizer():
    rng = np.random.default_rng(0)
    for _ in range(20):
        prob = random_problem(rng, active=False)
        sol = solve(prob)
        assert not sol.active and sol.lam == 0.0
        np.testing.assert_allclose(sol.x, np.linalg.solve(prob.H, -prob.g), rtol=1e-12, atol=1e-14)


def test_infeasible_raises():
    prob = QcqpProblem(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(InfeasibleProblem):
        solve(prob)


def test_validation():
    with pytest.raises(ValueError):
        QcqpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), np.eye(2), np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        QcqpProblem(-np.eye(2), np.zeros(2), np.eye(2), np.zeros(2), -1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kkt_conditions(seed):
    prob = random_problem(np.random.default_rng(seed))
    sol = solve(prob)
    c = prob.constraint(sol.x)
    assert c <= 1e-8
    assert sol.lam >= 0
    scale = 1 + np.linalg.norm(prob.g) + sol.lam * np.linalg.norm(prob.q_lin)
    assert np.linalg.norm(_kkt(prob, sol)) <= 1e-9 * scale
    assert abs(sol.lam * c) <= 1e-10 * (1 + sol.lam)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dual_monotone(seed):
    prob = random_problem(np.random.default_rng(seed), active=True)
    vals = []
    for lam in np.geomspace(1e-4, 1e3, 40):
        x = -np.linalg.solve(prob.H + 2 * lam * prob.Qc, prob.g + lam * prob.q_lin)
        vals.append(prob.constraint(x))
    assert np.all(np.diff(vals) <= 1e-9 * (1 + np.abs(vals[:-1])))


def test_against_projected_gradient():
    rng = np.random.default_rng(1)
    for _ in range(25):
        prob = random_problem(rng)
        sol = solve(prob)
        x_o = projected_gradient(prob)
        f, fo = prob.objective(sol.x), prob.objective(x_o)
        assert abs(f - fo) <= 1e-6 * max(abs(fo), 1e-12)


def test_against_rejection_sampling():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, active=True)
    sol = solve(prob)
    E = Ellipsoid(prob.Qc, prob.q_lin, prob.c0)
    X = sample_inside(E, rng, 100_000)
    feas = np.einsum("ij,jk,ik->i", X, prob.Qc, X) + X @ prob.q_lin + prob.c0 <= 0
    assert feas.mean() > 0.999
    X = X[feas]
    fx = 0.5 * np.einsum("ij,jk,ik->i", X, prob.H, X) + X @ prob.g
    assert np.min(fx) - prob.objective(sol.x) >= -1e-9
