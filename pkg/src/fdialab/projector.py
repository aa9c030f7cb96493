"""Measurement-free actuation-projected state and its anomaly score.

The projected state ``x_tilde`` is propagated open-loop with the applied
commands only, so a sensor attack cannot reach it. Its residual against the
Kalman estimate, ``r_tilde = x_hat - x_tilde``, has a step-dependent
covariance under no attack; :func:`covariance_recursion` tabulates it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .estimator import EstimatorGains, EstimatorState
from .plant import PlantModel


@dataclass(frozen=True)
class ProjectorState:
    x_tilde: np.ndarray
    k_since_resync: int = 0


def resync(est: EstimatorState) -> ProjectorState:
    return ProjectorState(np.array(est.x_hat, dtype=float, copy=True), 0)


def project_step(ps: ProjectorState, u, model: PlantModel) -> ProjectorState:
    return ProjectorState(model.A @ ps.x_tilde + model.B @ u, ps.k_since_resync + 1)


def residual(ps: ProjectorState, est: EstimatorState) -> np.ndarray:
    return est.x_hat - ps.x_tilde


def augmented_matrices(gains: EstimatorGains, model: PlantModel):
    """``F``, ``Gamma`` and ``Pi`` of the stacked (error, residual) dynamics."""
    A, C, L = model.A, model.C, gains.L
    m = A.shape[0]
    Z = np.zeros((m, m))
    F = np.block([[A - L @ C, Z], [L @ C, A]])
    Gamma = np.block([[np.eye(m), -L], [Z, L]])
    noise = sla.block_diag(model.Q, model.R)
    Pi = Gamma @ noise @ Gamma.T
    return F, Gamma, Pi


def covariance_recursion(gains: EstimatorGains, model: PlantModel, K_max: int) -> np.ndarray:
    """Residual covariances ``Sigma_{r~,k}`` for ``k = 1..K_max`` as a (K_max, 2n, 2n) array.

    Iterates ``Xi <- F Xi F^T + Pi`` from ``Xi_0 = diag(P, 0)`` and keeps the
    lower-right block.
    """
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    F, _, Pi = augmented_matrices(gains, model)
    m = model.A.shape[0]
    Xi = sla.block_diag(gains.P, np.zeros((m, m)))
    out = np.empty((K_max, m, m))
    for k in range(K_max):
        Xi = F @ Xi @ F.T + Pi
        Xi = 0.5 * (Xi + Xi.T)
        out[k] = Xi[m:, m:]
    return out


class CovarianceTable:
    """Precomputed ``Sigma_{r~,k}`` with Cholesky factors, indexed by k >= 1."""

    def __init__(self, gains: EstimatorGains, model: PlantModel, K_max: int):
        self.covs = covariance_recursion(gains, model, K_max)
        self.chols = np.empty_like(self.covs)
        for i, S in enumerate(self.covs):
            try:
                self.chols[i] = np.linalg.cholesky(S)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(
                    f"residual covariance at k={i + 1} is not positive definite; "
                    "the process/measurement noise is too small for this horizon"
                ) from exc

    @property
    def K_max(self) -> int:
        return self.covs.shape[0]

    def cov(self, k: int) -> np.ndarray:
        return self.covs[self._index(k)]

    def _index(self, k: int) -> int:
        if k < 1:
            raise ValueError("the projected residual is identically zero at k = 0")
        if k > self.K_max:
            raise IndexError(f"k={k} beyond the tabulated horizon {self.K_max}")
        return k - 1

    def score(self, r_tilde: np.ndarray, k: int) -> float:
        s = sla.solve_triangular(self.chols[self._index(k)], r_tilde, lower=True, check_finite=False)
        return float(s @ s)

    def trace_monotone(self) -> np.ndarray:
        """Indices k where trace(Sigma_{k+1}) < trace(Sigma_k); empty when monotone."""
        tr = np.trace(self.covs, axis1=1, axis2=2)
        return np.nonzero(np.diff(tr) < 0)[0] + 1


def anomaly_score(r_tilde, Sigma_k) -> float:
    """``r~^T Sigma_k^{-1} r~``; raises if the covariance is singular."""
    try:
        chol = np.linalg.cholesky(np.asarray(Sigma_k, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("projected residual covariance is singular (k = 0?)") from exc
    s = sla.solve_triangular(chol, np.asarray(r_tilde, dtype=float), lower=True, check_finite=False)
    return float(s @ s)
