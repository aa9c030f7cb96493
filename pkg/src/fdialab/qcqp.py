"""Strictly convex QP with a single convex quadratic inequality.

    minimize    0.5 x^T H x + g^T x
    subject to  x^T Qc x + q_lin^T x + c0 <= 0

Solved through the scalar dual: ``x(lam) = -(H + 2 lam Qc)^{-1} (g + lam q_lin)``
and the constraint value along ``x(lam)`` is non-increasing in ``lam``, so the
active multiplier is found by bracketing and bisection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class InfeasibleProblem(ValueError):
    pass


class SolverDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class QcqpProblem:
    H: np.ndarray
    g: np.ndarray
    Qc: np.ndarray
    q_lin: np.ndarray
    c0: float

    def __post_init__(self):
        for name in ("H", "Qc"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} must be symmetric")
        try:
            np.linalg.cholesky(self.H)
        except np.linalg.LinAlgError as exc:
            raise ValueError("H must be positive definite") from exc

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def constraint(self, x) -> float:
        return float(x @ self.Qc @ x + self.q_lin @ x + self.c0)

    def constraint_minimum(self) -> tuple[np.ndarray, float]:
        """Minimizer and value of the constraint quadratic (least-squares if Qc is singular)."""
        x = -0.5 * np.linalg.lstsq(self.Qc, self.q_lin, rcond=None)[0]
        return x, self.constraint(x)


@dataclass(frozen=True)
class QcqpSolution:
    x: np.ndarray
    lam: float
    active: bool
    iterations: int = 0


def _primal(prob: QcqpProblem, lam: float) -> np.ndarray:
    K = prob.H + 2.0 * lam * prob.Qc
    c = sla.cho_factor(K, lower=True, check_finite=False)
    return -sla.cho_solve(c, prob.g + lam * prob.q_lin, check_finite=False)


def solve(prob: QcqpProblem, tol: float = 1e-10, max_iter: int = 500) -> QcqpSolution:
    """Global minimizer with its multiplier; ``active`` tells whether the constraint binds.

    ``tol`` bounds the constraint residual at an active solution; the returned
    point is always on the feasible side.
    """
    x0 = _primal(prob, 0.0)
    if prob.constraint(x0) <= 0.0:
        return QcqpSolution(x0, 0.0, False)

    x_min, g_min = prob.constraint_minimum()
    if g_min > 0.0:
        raise InfeasibleProblem(f"constraint cannot be satisfied: its minimum value is {g_min:.6g} > 0")

    # bracket: grow lam until the primal point is feasible
    lo, hi = 0.0, 1.0
    scale = np.trace(prob.H) / max(np.trace(prob.Qc), 1e-300)
    hi = max(hi, scale)
    it = 0
    while prob.constraint(_primal(prob, hi)) > 0.0:
        lo, hi = hi, 2.0 * hi
        it += 1
        if it > 2000 or not np.isfinite(hi):
            raise SolverDidNotConverge(f"could not bracket the multiplier (last bracket [{lo:.3g}, {hi:.3g}])")

    x_hi = _primal(prob, hi)
    c_hi = prob.constraint(x_hi)
    for it in range(it, it + max_iter):
        if -tol <= c_hi <= 0.0:
            return QcqpSolution(x_hi, hi, True, it)
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x_mid = _primal(prob, mid)
        c_mid = prob.constraint(x_mid)
        if c_mid > 0.0:
            lo = mid
        else:
            hi, x_hi, c_hi = mid, x_mid, c_mid
    if c_hi <= 0.0 and abs(c_hi) <= max(tol, 1e-6 * abs(prob.c0)):
        # bracket collapsed to machine precision; the feasible end is the answer
        return QcqpSolution(x_hi, hi, True, it)
    raise SolverDidNotConverge(
        f"bisection stalled: lam in [{lo:.17g}, {hi:.17g}], constraint at upper end {c_hi:.3e}"
    )
