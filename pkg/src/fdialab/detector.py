"""Chi-square detector on Kalman innovations.

The chi-square CDF and its inverse are computed from a local regularized
incomplete gamma implementation (series below ``a + 1``, Lentz continued
fraction above), so the calibration path has no special-function dependency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

DEFAULT_TAU = 71.5735

_EPS = 1e-16
_MAX_TERMS = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), tail-accurate."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_sf(x: float, dof: int) -> float:
    return gammainc_upper(dof / 2.0, x / 2.0)


def chi2_inv_cdf(prob: float, dof: int) -> float:
    """Quantile of chi-square(dof) by bracketing bisection."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if dof < 1 or int(dof) != dof:
        raise ValueError("dof must be a positive integer")
    # compare in the tail that keeps precision
    upper_tail = prob > 0.5
    target = 1.0 - prob if upper_tail else prob

    def below(x):  # True if x is below the quantile
        return chi2_sf(x, dof) > target if upper_tail else chi2_cdf(x, dof) < target

    lo, hi = 0.0, max(1.0, float(dof))
    while below(hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > 4 * np.finfo(float).eps * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if below(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DetectorConfig:
    tau: float
    alpha_F: float
    p: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.alpha_F < 1.0:
            raise ValueError("alpha_F must lie in (0, 1)")
        if abs(chi2_inv_cdf(1.0 - self.alpha_F, self.p) - self.tau) > 1e-6 * max(1.0, self.tau):
            raise ValueError("tau and alpha_F are inconsistent")

    @property
    def arl(self) -> float:
        return 1.0 / self.alpha_F

    @classmethod
    def from_tau(cls, tau: float = DEFAULT_TAU, p: int = 14) -> "DetectorConfig":
        return cls(tau, chi2_sf(tau, p), p)

    @classmethod
    def from_alpha(cls, alpha_F: float, p: int = 14) -> "DetectorConfig":
        return cls(chi2_inv_cdf(1.0 - alpha_F, p), alpha_F, p)

    @classmethod
    def from_arl(cls, arl_steps: float, p: int = 14) -> "DetectorConfig":
        return cls.from_alpha(1.0 / arl_steps, p)


def mahalanobis(r, Sigma=None, chol=None) -> float:
    """``r^T Sigma^{-1} r`` by a triangular solve against the Cholesky factor."""
    r = np.asarray(r, dtype=float)
    if chol is None:
        try:
            chol = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("covariance is singular or not positive definite") from exc
    s = sla.solve_triangular(chol, r, lower=True, check_finite=False)
    return float(s @ s)


def alarm(z: float, cfg: DetectorConfig) -> bool:
    return z > cfg.tau
