"""Manipulability reduction along the estimated attack direction.

The secondary command descends ``C = 0.5 w^2`` inside the task null space,
and the primary task uses a weighted pseudoinverse that, when ``C`` is
stationary, penalizes motion along directions of positive curvature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .controller import RANK_TOL, RankDeficientJacobian

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManipConfig:
    alpha: float = 10.0
    D_diag: tuple = (1.0,) * 7
    nu_max: float = 5.0
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    armijo_max_backtracks: int = 30
    grad_zero_tol: float = 1e-4
    quota: float = 0.3
    softplus_eps: float = 1e-6
    direction_eps: float = 1e-2
    blend: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if np.any(np.asarray(self.D_diag) <= 0):
            raise ValueError("D must be positive definite")
        if not (0 < self.armijo_c < 1 and 0 < self.armijo_beta < 1):
            raise ValueError("Armijo constants must lie in (0, 1)")
        if not 0 <= self.quota < 1:
            raise ValueError("quota must lie in [0, 1)")
        if self.nu_max <= 0 or self.direction_eps <= 0 or self.softplus_eps <= 0:
            raise ValueError("nu_max, direction_eps and softplus_eps must be positive")

    @property
    def D(self) -> np.ndarray:
        return np.diag(np.asarray(self.D_diag, float))


@dataclass(frozen=True)
class AttackDirection:
    d: np.ndarray
    magnitude: float


def estimate_direction(p_tilde, p_ref, eps: float) -> AttackDirection:
    if eps <= 0:
        raise ValueError("eps must be positive")
    diff = np.asarray(p_tilde, float) - np.asarray(p_ref, float)
    mag = float(np.linalg.norm(diff))
    return AttackDirection(diff / (mag + eps), mag)


def softplus_shift(lam_min: float, eps: float) -> float:
    """``log(1 + exp(eps - lam_min))`` without overflow."""
    x = eps - lam_min
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


@dataclass(frozen=True)
class NullSpaceStep:
    u_sec: np.ndarray
    nu: float
    accepted: bool
    backtracks: int


def null_space_command(N: np.ndarray, grad: np.ndarray, cost: Callable[[np.ndarray], float],
                       q: np.ndarray, cfg: ManipConfig) -> NullSpaceStep:
    """``-nu (I - J^+ J) grad`` with ``nu`` from backtracking Armijo on ``cost(q + nu s)``.

    ``N`` is the null-space projector of the task Jacobian and ``cost`` evaluates
    the manipulability cost with the direction frozen.
    """
    zero = np.zeros_like(grad)
    if np.linalg.norm(grad) <= cfg.grad_zero_tol:
        return NullSpaceStep(zero, 0.0, True, 0)
    s = -(N @ grad)
    slope = float(grad @ s)  # = -|N grad|^2 for an orthogonal projector
    if slope >= 0 or np.linalg.norm(s) <= 1e-12 * np.linalg.norm(grad):
        return NullSpaceStep(zero, 0.0, True, 0)
    c0 = cost(q)
    nu = cfg.nu_max
    for i in range(cfg.armijo_max_backtracks + 1):
        if cost(q + nu * s) <= c0 + cfg.armijo_c * nu * slope:
            return NullSpaceStep(nu * s, nu, True, i)
        if i < cfg.armijo_max_backtracks:
            nu *= cfg.armijo_beta
    log.debug("Armijo search did not accept a step; using nu=%g", nu)
    return NullSpaceStep(nu * s, nu, False, cfg.armijo_max_backtracks)


def _cutoff(x: float) -> float:
    # smooth step: 1 at x <= 0, 0 at x >= 1, C1 in between
    if x <= 0:
        return 1.0
    if x >= 1:
        return 0.0
    return 1.0 - x * x * (3.0 - 2.0 * x)


def weighting_matrix(cfg: ManipConfig, grad_norm: float, hessian: np.ndarray | None) -> np.ndarray:
    """Weight ``W``: ``D`` while the cost gradient is non-zero, ``D + alpha (H + mu I)`` when stationary.

    With ``cfg.blend`` the switch is replaced by a smooth cutoff of
    ``grad_norm / grad_zero_tol`` that reaches zero at twice the tolerance.
    """
    D = cfg.D
    if cfg.blend:
        weight = _cutoff(grad_norm / cfg.grad_zero_tol - 1.0)
    else:
        weight = 1.0 if grad_norm <= cfg.grad_zero_tol else 0.0
    if weight == 0.0 or cfg.alpha == 0.0:
        return D
    if hessian is None:
        raise ValueError("a Hessian is needed where the cost is stationary")
    H = 0.5 * (hessian + hessian.T)
    mu = softplus_shift(float(np.linalg.eigvalsh(H)[0]), cfg.softplus_eps)
    return D + weight * cfg.alpha * (H + mu * np.eye(H.shape[0]))


def weighted_pseudoinverse(J: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``W^-1 J^T (J W^-1 J^T)^-1`` through Cholesky factors."""
    try:
        cW = sla.cho_factor(W, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("weighting matrix is not positive definite") from exc
    WiJt = sla.cho_solve(cW, J.T)
    S = J @ WiJt
    try:
        cS = sla.cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise RankDeficientJacobian(float(np.linalg.svd(J, compute_uv=False)[-1]))
    if np.min(np.abs(np.diag(cS[0]))) ** 2 < RANK_TOL**2 * 1e-3:
        raise RankDeficientJacobian(float(np.linalg.svd(J, compute_uv=False)[-1]))
    return sla.cho_solve(cS, WiJt.T).T
