import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fdialab import kinematics as kin
from fdialab.controller import (ControllerGains, RankDeficientJacobian, check_rank, circle_reference,
                                hierarchical_scale, lqr_gains, pinv_and_nullspace, quintic_time_law,
                                resolve_redundancy, still_reference, task_pd)

LIM = (-np.array([1.0, 1, 1, 1, 10, 10, 10]), np.array([1.0, 1, 1, 1, 10, 10, 10]))


def test_lqr_gains_stabilize():
    kp, kd = lqr_gains(0.01, 100.0, 10.0, 1.0)
    assert kp == pytest.approx(10.0, rel=0.05)
    A = np.array([[1.0, 0.01], [0.0, 1.0]])
    B = np.array([[0.5e-4], [0.01]])
    rho = max(abs(np.linalg.eigvals(A - B @ np.array([[kp, kd]]))))
    assert rho < 1
    # independent check: the gain satisfies the stationarity of the Riccati solution
    P = sla.solve_discrete_are(A, B, np.diag([100.0, 10.0]), np.eye(1))
    K = np.linalg.solve(np.eye(1) + B.T @ P @ B, B.T @ P @ A)
    np.testing.assert_allclose([kp, kd], K.ravel(), rtol=1e-12)
    with pytest.raises(ValueError):
        lqr_gains(0.01, 0.0, 1.0, 1.0)


def test_gains_validation():
    I = np.eye(3)
    with pytest.raises(ValueError):
        ControllerGains(-I, I, I, I)


def test_quintic_law_boundary():
    s, sd, sdd = quintic_time_law(101, 0.01)
    assert s[0] == 0.0 and s[-1] == pytest.approx(1.0)
    assert sd[0] == 0.0 and sd[-1] == pytest.approx(0.0, abs=1e-12)
    assert sdd[0] == 0.0 and sdd[-1] == pytest.approx(0.0, abs=1e-9)
    assert np.all(np.diff(s) >= 0)


def test_circle_reference_geometry():
    p0, p1 = np.array([0.45, 0.05, 0.40]), np.array([0.05, 0.45, 0.40])
    T, Ts = 2001, 0.01
    ref = circle_reference(p0, p1, T, Ts)
    np.testing.assert_allclose(ref.p[0], p0, atol=1e-12)
    np.testing.assert_allclose(ref.p[-1], p1, atol=1e-12)
    # equal radii: every sample on the sphere through the endpoints
    np.testing.assert_allclose(np.linalg.norm(ref.p, axis=1), np.linalg.norm(p0), rtol=1e-12)
    # velocity and acceleration are the time derivatives of position
    np.testing.assert_allclose(np.gradient(ref.p, Ts, axis=0)[1:-1], ref.pd[1:-1], atol=1e-5)
    np.testing.assert_allclose(np.gradient(ref.pd, Ts, axis=0)[1:-1], ref.pdd[1:-1], atol=1e-5)
    assert ref.rows == 3
    with pytest.raises(ValueError):
        circle_reference(p0, 2 * p0, T, Ts)


def test_still_reference_and_hold():
    R = kin.rpy_to_matrix([0.1, 0.2, 0.3])
    ref = still_reference([1, 2, 3], R, 5)
    assert ref.rows == 6
    np.testing.assert_array_equal(ref.at(99)[0], [1, 2, 3])
    np.testing.assert_array_equal(ref.pd, 0)


def test_task_pd_zero_at_reference():
    R = kin.rpy_to_matrix([0.1, 0.2, 0.3])
    ref = still_reference([0.4, 0.0, 0.3], R, 3)
    g = ControllerGains.from_lqr(0.01)
    u = task_pd(ref, 0, kin.HandPose(np.array([0.4, 0.0, 0.3]), R), np.zeros(6), g)
    np.testing.assert_allclose(u, 0.0, atol=1e-15)
    u = task_pd(ref, 0, kin.HandPose(np.array([0.4, 0.1, 0.3]), R), np.zeros(6), g)
    np.testing.assert_allclose(u[:3], g.Kpp @ [0, -0.1, 0])


def test_rank_check():
    J = np.zeros((3, 7))
    J[0, 0] = J[1, 1] = 1.0
    with pytest.raises(RankDeficientJacobian):
        check_rank(J)
    with pytest.raises(RankDeficientJacobian):
        pinv_and_nullspace(J)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(float, 7, elements=st.floats(-np.pi, np.pi)))
def test_pinv_and_projector(q):
    J = kin.geometric_jacobian(kin.default_chain(), q)[:3]
    if np.linalg.svd(J, compute_uv=False)[-1] < 1e-3:
        return
    Jp, N = pinv_and_nullspace(J)
    np.testing.assert_allclose(Jp, np.linalg.pinv(J), atol=1e-9)
    np.testing.assert_allclose(N, np.eye(7) - Jp @ J, atol=1e-10)
    np.testing.assert_allclose(N @ N, N, atol=1e-10)
    assert np.abs(J @ N).max() < 1e-10


def test_redundancy_keeps_task_acceleration(chain, q_home):
    J = kin.geometric_jacobian(chain, q_home)[:3]
    Jp, N = pinv_and_nullspace(J)
    rng = np.random.default_rng(0)
    qdot_null = N @ rng.standard_normal(7)      # damping term lives in null(J)
    u_pd = rng.standard_normal(3)
    jdq = rng.standard_normal(3)
    u_sec = N @ rng.standard_normal(7)
    prim, sec = resolve_redundancy(u_pd, qdot_null, J, jdq, Jp, N, u_sec, 1.0)
    assert np.linalg.norm(J @ (prim + sec) - (u_pd - jdq)) <= 1e-6
    with pytest.raises(ValueError):
        resolve_redundancy(u_pd, qdot_null, J, jdq, Jp, N, J[0], 1.0)


vec7 = hnp.arrays(float, 7, elements=st.floats(-50, 50))


@settings(max_examples=300, deadline=None)
@given(vec7, vec7, st.floats(0, 0.9))
def test_hierarchical_scale_within_limits(up, us, quota):
    u = hierarchical_scale(up, us, LIM, quota)
    assert np.all(u >= LIM[0] - 1e-12) and np.all(u <= LIM[1] + 1e-12)


@settings(max_examples=200, deadline=None)
@given(vec7, st.floats(0, 0.9))
def test_hierarchical_scale_preserves_primary_direction(up, quota):
    u = hierarchical_scale(up, np.zeros(7), LIM, quota)
    if np.linalg.norm(up) > 0:
        # u = s up with 0 < s <= 1
        s = float(u @ up / (up @ up))
        assert 0 < s <= 1 + 1e-12
        np.testing.assert_allclose(u, s * up, atol=1e-12)


def test_hierarchical_scale_quota_reserve():
    up = np.full(7, 100.0)
    u = hierarchical_scale(up, np.zeros(7), LIM, 0.3)
    # the primary may use at most 70 % of the smallest symmetric capability
    assert np.abs(u).max() == pytest.approx(0.7)
    u2 = hierarchical_scale(np.full(7, 0.1), np.full(7, 100.0), LIM, 0.3)
    assert np.all(u2 <= LIM[1] + 1e-12) and np.any(np.isclose(u2, LIM[1]))
    with pytest.raises(ValueError):
        hierarchical_scale(up, up, LIM, 1.0)
