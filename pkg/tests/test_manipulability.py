import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fdialab import kinematics as kin
from fdialab.controller import pinv_and_nullspace
from fdialab.manipulability import (ManipConfig, estimate_direction, null_space_command, softplus_shift,
                                    weighted_pseudoinverse, weighting_matrix)

CFG = ManipConfig()


def test_direction_examples():
    a = estimate_direction(np.ones(3), np.ones(3), 1e-6)
    assert np.linalg.norm(a.d) == 0.0 and a.magnitude == 0.0
    a = estimate_direction([0, 0, 0.1], [0, 0, 0], 1e-9)
    np.testing.assert_allclose(a.d, [0, 0, 1], atol=1e-7)
    assert a.magnitude == pytest.approx(0.1)
    with pytest.raises(ValueError):
        estimate_direction(np.ones(3), np.zeros(3), 0.0)


def test_direction_small_near_reference():
    # the default floor keeps d small for sub-millimetre offsets
    a = estimate_direction([1e-4, 0, 0], [0, 0, 0], CFG.direction_eps)
    assert np.linalg.norm(a.d) < 0.02


vec3 = hnp.arrays(float, 3, elements=st.floats(-10, 10))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3, st.floats(1e-12, 1.0))
def test_direction_norm_bounded(p, r, eps):
    assert np.linalg.norm(estimate_direction(p, r, eps).d) <= 1 + 1e-9


def test_softplus_examples():
    assert softplus_shift(0.0, 1e-6) == pytest.approx(math.log(1 + math.exp(1e-6)), rel=1e-12)
    assert softplus_shift(0.0, 1e-6) == pytest.approx(0.6931, abs=1e-4)
    assert softplus_shift(5.0, 1e-6) == pytest.approx(6.7e-3, rel=0.01)
    assert math.isfinite(softplus_shift(-1e6, 1e-6))
    assert softplus_shift(1e6, 1e-6) == 0.0


def test_softplus_derivative_continuous():
    lam = np.linspace(-5, 5, 2001)
    mu = np.array([softplus_shift(x, 1e-6) for x in lam])
    d = np.diff(mu) / np.diff(lam)
    # derivative is -sigmoid(eps - lam): smooth, in (-1, 0)
    assert np.all(d < 0) and np.all(d > -1)
    assert np.abs(np.diff(d)).max() < 1e-2


def _setup(chain, q):
    J = kin.geometric_jacobian(chain, q)[:3]
    _, N = pinv_and_nullspace(J)
    d = np.array([0.0, 0.6, 0.8])
    return J, N, d


def test_null_space_command_decreases_cost(chain, q_home):
    J, N, d = _setup(chain, q_home)
    grad = kin.manip_cost_gradient(chain, q_home, d)
    step = null_space_command(N, grad, lambda q: kin.manip_cost(chain, q, d), q_home, CFG)
    assert step.accepted and 0 < step.nu <= CFG.nu_max
    assert np.linalg.norm(J @ step.u_sec) <= 1e-8 * np.linalg.norm(step.u_sec)
    # roll the kinematics one sample forward under the secondary command alone
    Ts = 0.01
    q1 = q_home + 0.5 * Ts**2 * step.u_sec
    assert kin.manip_cost(chain, q1, d) < kin.manip_cost(chain, q_home, d)


def test_null_space_command_zero_branches(chain, q_home):
    J, N, d = _setup(chain, q_home)
    cost = lambda q: kin.manip_cost(chain, q, d)  # noqa: E731
    s = null_space_command(N, np.zeros(7), cost, q_home, CFG)
    assert np.array_equal(s.u_sec, np.zeros(7))
    s = null_space_command(N, J.T @ np.array([1.0, -2.0, 0.5]), cost, q_home, CFG)
    assert np.linalg.norm(s.u_sec) == 0.0


def test_weighting_switch(chain, q_home):
    H = np.zeros((7, 7))
    np.testing.assert_array_equal(weighting_matrix(CFG, 1.0, None), np.eye(7))
    W = weighting_matrix(CFG, 0.0, H)
    mu = softplus_shift(0.0, CFG.softplus_eps)
    np.testing.assert_allclose(W, (1 + CFG.alpha * mu) * np.eye(7))
    with pytest.raises(ValueError):
        weighting_matrix(CFG, 0.0, None)


def test_weighting_blend_continuous():
    cfg = ManipConfig(blend=True)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((7, 7))
    H = A + A.T
    biggest = []
    for count in (301, 3001, 30001):
        g = np.linspace(0, 3 * cfg.grad_zero_tol, count)
        Ws = np.array([weighting_matrix(cfg, x, H) for x in g])
        biggest.append(np.linalg.norm(np.diff(Ws, axis=0), axis=(1, 2)).max())
        np.testing.assert_allclose(Ws[-1], np.eye(7))
    # the largest jump shrinks with the sampling step, so W is continuous along the path
    assert biggest[1] < 0.2 * biggest[0] and biggest[2] < 0.2 * biggest[1]
    # the hard switch does jump
    hard = [weighting_matrix(ManipConfig(), x, H) for x in (CFG.grad_zero_tol, CFG.grad_zero_tol * (1 + 1e-9))]
    assert np.linalg.norm(hard[1] - hard[0]) > 1.0


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(float, 7, elements=st.floats(-np.pi, np.pi)), st.integers(0, 2**32 - 1))
def test_weighted_pseudoinverse_right_inverse(q, seed):
    J = kin.geometric_jacobian(kin.default_chain(), q)[:3]
    if np.linalg.svd(J, compute_uv=False)[-1] < 1e-2:
        return
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((7, 7))
    W = A @ A.T + np.eye(7)
    Js = weighted_pseudoinverse(J, W)
    np.testing.assert_allclose(J @ Js, np.eye(3), atol=1e-8)
    # W-weighted minimum norm: J* = W^-1 J^T (J W^-1 J^T)^-1
    Wi = np.linalg.inv(W)
    np.testing.assert_allclose(Js, Wi @ J.T @ np.linalg.inv(J @ Wi @ J.T), atol=1e-7)


def test_weighted_pseudoinverse_identity_weight(chain, q_home):
    J = kin.geometric_jacobian(chain, q_home)[:3]
    np.testing.assert_allclose(weighted_pseudoinverse(J, np.eye(7)), np.linalg.pinv(J), atol=1e-10)
    with pytest.raises(np.linalg.LinAlgError):
        weighted_pseudoinverse(J, -np.eye(7))


def test_config_validation():
    with pytest.raises(ValueError):
        ManipConfig(quota=1.0)
    with pytest.raises(ValueError):
        ManipConfig(D_diag=(0.0,) * 7)
    with pytest.raises(ValueError):
        ManipConfig(armijo_c=1.5)
