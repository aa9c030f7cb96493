"""Feedback-linearized manipulator as n saturated, noisy double integrators.

The state is stacked as ``x = [q; qdot]`` (positions first), so the process
noise covariance is literally ``Q_base (x) q_c I_n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

PAPER_U_MAX = (1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0)


@dataclass(frozen=True)
class PlantModel:
    n: int
    Ts: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        n = self.n
        if self.A.shape != (2 * n, 2 * n) or self.B.shape != (2 * n, n):
            raise ValueError("A must be 2n x 2n and B 2n x n")
        for name in ("Q", "R"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=0.0, rtol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-15 * max(1.0, np.abs(self.Q).max()):
            raise ValueError("Q must be positive semidefinite")
        np.linalg.cholesky(self.R)  # raises LinAlgError unless R > 0
        if not (np.all(self.u_min < 0) and np.all(self.u_max > 0)):
            raise ValueError("limits must satisfy u_min < 0 < u_max element-wise")

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @cached_property
    def chol_Q(self) -> np.ndarray:
        # Q may be singular in tests (Q = 0); fall back to an eigen square root.
        try:
            return np.linalg.cholesky(self.Q)
        except np.linalg.LinAlgError:
            lam, V = np.linalg.eigh(self.Q)
            return V * np.sqrt(np.clip(lam, 0.0, None))

    @cached_property
    def chol_R(self) -> np.ndarray:
        return np.linalg.cholesky(self.R)

    @property
    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u_min, self.u_max

    @classmethod
    def double_integrator(
        cls,
        n: int = 7,
        Ts: float = 0.01,
        q_c: float = 1e-8,
        sigma_q: float = 5e-5,
        sigma_qd: float = 1e-2,
        u_max=PAPER_U_MAX,
        u_min=None,
    ) -> "PlantModel":
        """Exact discretization of per-joint double integrators with CWNA noise."""
        I = np.eye(n)
        A = np.block([[I, Ts * I], [np.zeros((n, n)), I]])
        B = np.vstack((0.5 * Ts**2 * I, Ts * I))
        Q_base = np.array([[Ts**3 / 3, Ts**2 / 2], [Ts**2 / 2, Ts]])
        Q = np.kron(Q_base, q_c * I)
        R = np.diag(np.concatenate((np.full(n, sigma_q**2), np.full(n, sigma_qd**2))))
        u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (n,)).copy()
        u_min = -u_max if u_min is None else np.broadcast_to(np.asarray(u_min, dtype=float), (n,)).copy()
        return cls(n, Ts, A, B, np.eye(2 * n), Q, R, u_min, u_max)


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise FloatingPointError("plant state is not finite")


def saturate(u, limits) -> np.ndarray:
    u_min, u_max = limits
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("cannot saturate a non-finite input")
    if not np.all(u_min < u_max):
        raise ValueError("invalid limits: need u_min < u_max")
    return np.minimum(np.maximum(u, u_min), u_max)


def draw_noise(model: PlantModel, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One step of process and measurement noise, drawn in that order."""
    w = model.chol_Q @ rng.standard_normal(2 * model.n)
    v = model.chol_R @ rng.standard_normal(model.p)
    return w, v


def plant_step(state: PlantState, u, model: PlantModel, noisy: bool = False,
               rng: np.random.Generator | None = None, w=None) -> PlantState:
    """``x' = A x + B Sat(u) + w``; deterministic unless ``noisy``.

    An explicit ``w`` overrides the internal draw (used by the scenario loop,
    which draws all noise for a tick up front).
    """
    x = model.A @ state.x + model.B @ saturate(u, model.limits)
    if w is not None:
        x = x + w
    elif noisy:
        if rng is None:
            raise ValueError("noisy step needs a random generator")
        x = x + model.chol_Q @ rng.standard_normal(2 * model.n)
    return PlantState(x)


def measure(state: PlantState, attack, model: PlantModel, noisy: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    attack = np.asarray(attack, dtype=float)
    if not np.all(np.isfinite(attack)):
        raise ValueError("attack must be finite")
    y = model.C @ state.x + attack
    if noisy:
        if rng is None:
            raise ValueError("noisy measurement needs a random generator")
        y = y + model.chol_R @ rng.standard_normal(model.p)
    return y
