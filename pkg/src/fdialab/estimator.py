"""Steady-state Kalman filter (one-step predictor, innovation form)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .plant import PlantModel


class DareDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorGains:
    P: np.ndarray
    Sigma: np.ndarray
    L: np.ndarray
    Sigma_chol: np.ndarray  # lower Cholesky factor of Sigma

    def whiten(self, r: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.Sigma_chol, r, lower=True, check_finite=False)


@dataclass(frozen=True)
class EstimatorState:
    x_hat: np.ndarray
    last_innovation: np.ndarray | None = None


def riccati_map(P, A, C, Q, R):
    S = C @ P @ C.T + R
    APC = A @ P @ C.T
    return A @ P @ A.T + Q - APC @ np.linalg.solve(S, APC.T)


def _gains_from_P(P, A, C, R) -> EstimatorGains:
    P = 0.5 * (P + P.T)
    Sigma = C @ P @ C.T + R
    Sigma = 0.5 * (Sigma + Sigma.T)
    chol = np.linalg.cholesky(Sigma)
    # L = A P C^T Sigma^{-1}, through the factor rather than an inverse
    L = sla.cho_solve((chol, True), (A @ P @ C.T).T).T
    return EstimatorGains(P, Sigma, L, chol)


def solve_dare(A, C, Q, R, tol: float = 1e-12, max_iter: int = 1_000_000) -> EstimatorGains:
    """Filter DARE by fixed-point iteration of the Riccati map from ``P0 = Q``."""
    A, C, Q, R = (np.asarray(M, dtype=float) for M in (A, C, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        P_next = riccati_map(P, A, C, Q, R)
        scale = np.linalg.norm(P_next)
        if np.linalg.norm(P_next - P) <= tol * scale or scale == 0.0:
            return _gains_from_P(P_next, A, C, R)
        P = P_next
    g = _gains_from_P(P, A, C, R)
    rho = max(abs(np.linalg.eigvals(A - g.L @ C)))
    raise DareDidNotConverge(
        f"Riccati iteration did not converge in {max_iter} steps (spectral radius of A - LC = {rho:.6g})"
    )


def _joint_blocks_decoupled(model: PlantModel) -> bool:
    n = model.n
    mask = np.zeros((2 * n, 2 * n), dtype=bool)
    for j in range(n):
        idx = [j, n + j]
        mask[np.ix_(idx, idx)] = True
    return all(np.all(M[~mask] == 0.0) for M in (model.A, model.Q, model.R)) and np.array_equal(
        model.C, np.eye(2 * n)
    )


def steady_state_gains(model: PlantModel, tol: float = 1e-12) -> EstimatorGains:
    """Solve the filter DARE per joint (2x2 blocks) and assemble.

    Falls back to the full-size iteration when the noise or dynamics couple
    joints.
    """
    if not _joint_blocks_decoupled(model):
        return solve_dare(model.A, model.C, model.Q, model.R, tol=tol)
    n = model.n
    P = np.zeros((2 * n, 2 * n))
    for j in range(n):
        idx = np.ix_([j, n + j], [j, n + j])
        g = solve_dare(model.A[idx], np.eye(2), model.Q[idx], model.R[idx], tol=tol)
        P[idx] = g.P
    return _gains_from_P(P, model.A, model.C, model.R)


def dare_residual(gains: EstimatorGains, A, C, Q, R) -> float:
    return float(np.linalg.norm(gains.P - riccati_map(gains.P, A, C, Q, R)))


def kalman_step(est: EstimatorState, gains: EstimatorGains, u, y_tilde, model: PlantModel) -> EstimatorState:
    """Returns the next prior estimate; ``last_innovation`` holds ``r_k``.

    ``u`` is the command actually applied at step k.
    """
    r = y_tilde - model.C @ est.x_hat
    x_next = model.A @ est.x_hat + model.B @ u + gains.L @ r
    return EstimatorState(x_next, r)
