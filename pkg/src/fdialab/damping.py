"""Anomaly-aware virtual damping driven by the projected anomaly score."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import chi2_inv_cdf

LIMIT_SLACK = 1e-12


@dataclass(frozen=True)
class DampingConfig:
    rho_max: float = 1.2
    rho_y: float = 0.01
    exp_m: float = 2.0
    z_x: float = 29.1412
    psi: float | None = None
    eps_vel: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.rho_y < self.rho_max:
            raise ValueError("need 0 < rho_y < rho_max")
        if self.exp_m <= 0 or self.z_x <= 0 or self.eps_vel < 0:
            raise ValueError("exp_m and z_x must be positive, eps_vel non-negative")
        if not math.isfinite(self.z_s) or self.z_s <= 0:
            raise ValueError("sigmoid scale is not finite and positive")

    @classmethod
    def from_confidence(cls, psi: float = 0.99, dof: int = 14, **kw) -> "DampingConfig":
        return cls(z_x=chi2_inv_cdf(psi, dof), psi=psi, **kw)

    def check_confidence(self, dof: int) -> None:
        if self.psi is not None and abs(chi2_inv_cdf(self.psi, dof) - self.z_x) > 1e-3:
            raise ValueError(f"z_x={self.z_x} is not the {self.psi} quantile of chi2({dof})")

    @property
    def z_s(self) -> float:
        return self.z_x * (-math.log1p(-self.rho_y / self.rho_max)) ** (-1.0 / self.exp_m)


def phi(z_tilde: float, cfg: DampingConfig) -> float:
    """Target dissipation ratio, rising from 0 to ``rho_max``."""
    if z_tilde < 0:
        raise ValueError("anomaly score must be non-negative")
    return cfg.rho_max * -math.expm1(-((z_tilde / cfg.z_s) ** cfg.exp_m))


def ideal_damping(u_nom_sat, qdot_tilde, z_tilde: float, cfg: DampingConfig) -> np.ndarray:
    """Per-joint command whose projected power is ``-phi * |P_nom_j|``; zero inside the deadband."""
    qd = np.asarray(qdot_tilde, float)
    f = phi(z_tilde, cfg)
    # |u q|/q written as |u| sign(q) so the power sign is exact in floating point
    u = -f * np.abs(u_nom_sat) * np.sign(qd)
    return np.where(np.abs(qd) > cfg.eps_vel, u, 0.0)


def headroom(u_nom_sat, limits) -> tuple[np.ndarray, np.ndarray]:
    u_min, u_max = limits
    return u_min - u_nom_sat, u_max - u_nom_sat


def headroom_clip(u_ideal, u_nom_sat, limits) -> np.ndarray:
    h_lo, h_hi = headroom(u_nom_sat, limits)
    # h_lo <= 0 <= h_hi, so clipping never flips the sign
    return np.maximum(np.minimum(u_ideal, np.maximum(h_hi, 0.0)), np.minimum(h_lo, 0.0))


def final_control(u_nom_sat, u_d, limits) -> np.ndarray:
    """``Sat(u_nom) + u_d``; the headroom construction keeps it inside the limits."""
    u_min, u_max = limits
    u = u_nom_sat + u_d
    if np.any(u < u_min - LIMIT_SLACK) or np.any(u > u_max + LIMIT_SLACK):
        raise AssertionError("damped command left the actuator box; headroom logic is broken")
    return np.minimum(np.maximum(u, u_min), u_max)


def dissipation_bound_holds(u_d, qdot_tilde, u_nom_sat, rho_y: float) -> bool:
    """Per-step event that the defense power stays within ``rho_y`` of the nominal power."""
    return float(np.sum(np.abs(u_d * qdot_tilde))) <= rho_y * float(np.sum(np.abs(u_nom_sat * qdot_tilde)))
