"""Task-space PD+feedforward control, redundancy resolution and actuation scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .kinematics import HandPose, orientation_error

RANK_TOL = 1e-6


class RankDeficientJacobian(np.linalg.LinAlgError):
    def __init__(self, sigma_min: float):
        super().__init__(f"task Jacobian lost row rank: smallest singular value {sigma_min:.3e} < {RANK_TOL:g}")
        self.sigma_min = sigma_min


def lqr_gains(Ts: float, q_pos_weight: float, q_vel_weight: float, r_weight: float) -> tuple[float, float]:
    """Discrete LQR for one axis of a double integrator; returns ``(kp, kd)``."""
    if min(q_pos_weight, q_vel_weight, r_weight) <= 0:
        raise ValueError("LQR weights must be positive")
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    B = np.array([[0.5 * Ts**2], [Ts]])
    Q = np.diag([q_pos_weight, q_vel_weight])
    R = np.array([[r_weight]])
    try:
        P = sla.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"LQR Riccati equation failed: {exc}") from exc
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(K[0, 0]), float(K[0, 1])


@dataclass(frozen=True)
class ControllerGains:
    Kpp: np.ndarray
    Kdp: np.ndarray
    Kpo: np.ndarray
    Kdo: np.ndarray
    c_w: float = 1.0

    def __post_init__(self):
        for name in ("Kpp", "Kdp", "Kpo", "Kdo"):
            if np.any(np.diag(getattr(self, name)) <= 0):
                raise ValueError(f"{name} needs positive diagonal entries")

    @classmethod
    def from_lqr(cls, Ts: float, q_pos: float = 100.0, q_vel: float = 10.0, r: float = 1.0,
                 c_w: float = 1.0) -> "ControllerGains":
        kp, kd = lqr_gains(Ts, q_pos, q_vel, r)
        I = np.eye(3)
        return cls(kp * I, kd * I, kp * I, kd * I, c_w)


@dataclass(frozen=True)
class TaskReference:
    """Time-indexed hand references; row k is the reference at step k."""
    p: np.ndarray       # (T, 3)
    pd: np.ndarray
    pdd: np.ndarray
    R: np.ndarray       # (T, 3, 3)
    omega: np.ndarray
    omegad: np.ndarray
    orientation_tracked: bool

    def __post_init__(self):
        T = self.p.shape[0]
        for name in ("pd", "pdd", "omega", "omegad"):
            if getattr(self, name).shape != (T, 3):
                raise ValueError(f"{name} must be ({T}, 3)")
        if self.R.shape != (T, 3, 3):
            raise ValueError("R must be (T, 3, 3)")

    @property
    def T(self) -> int:
        return self.p.shape[0]

    @property
    def rows(self) -> int:
        return 6 if self.orientation_tracked else 3

    def at(self, k: int):
        k = min(k, self.T - 1)  # hold the last sample past the horizon
        return self.p[k], self.pd[k], self.pdd[k], self.R[k], self.omega[k], self.omegad[k]


def still_reference(p, R, T: int, orientation_tracked: bool = True) -> TaskReference:
    p = np.broadcast_to(np.asarray(p, float), (T, 3)).copy()
    Z = np.zeros((T, 3))
    Rs = np.broadcast_to(np.asarray(R, float), (T, 3, 3)).copy()
    return TaskReference(p, Z, Z.copy(), Rs, Z.copy(), Z.copy(), orientation_tracked)


def quintic_time_law(T: int, Ts: float):
    """Minimum-jerk s(t) on [0, 1] with its first two time derivatives, sampled at k*Ts."""
    dur = (T - 1) * Ts
    t = np.arange(T) * Ts
    tau = t / dur
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    sd = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / dur
    sdd = (60 * tau - 180 * tau**2 + 120 * tau**3) / dur**2
    return s, sd, sdd


def circle_reference(p_start, p_end, T: int, Ts: float, R=None, orientation_tracked: bool = False) -> TaskReference:
    """Arc about the base origin from ``p_start`` to ``p_end``, in the plane through the three points.

    The radius is interpolated linearly along the arc when the endpoints sit
    at different distances from the origin.
    """
    p0 = np.asarray(p_start, float)
    p1 = np.asarray(p_end, float)
    r0, r1 = np.linalg.norm(p0), np.linalg.norm(p1)
    u0 = p0 / r0
    v = p1 / r1 - (p1 / r1 @ u0) * u0
    if np.linalg.norm(v) < 1e-9:
        raise ValueError("start and end are collinear with the origin; the arc plane is undefined")
    v /= np.linalg.norm(v)
    theta_f = np.arctan2(p1 / r1 @ v, p1 / r1 @ u0)
    s, sd, sdd = quintic_time_law(T, Ts)
    th, thd, thdd = theta_f * s, theta_f * sd, theta_f * sdd
    rad, radd, raddd = r0 + (r1 - r0) * s, (r1 - r0) * sd, (r1 - r0) * sdd
    c, sn = np.cos(th)[:, None], np.sin(th)[:, None]
    e = c * u0 + sn * v          # radial unit vector
    et = -sn * u0 + c * v        # tangential unit vector
    p = rad[:, None] * e
    pd = radd[:, None] * e + (rad * thd)[:, None] * et
    pdd = ((raddd - rad * thd**2)[:, None] * e
           + (2 * radd * thd + rad * thdd)[:, None] * et)
    if R is None:
        R = np.eye(3)
    Rs = np.broadcast_to(np.asarray(R, float), (T, 3, 3)).copy()
    Z = np.zeros((T, 3))
    return TaskReference(p, pd, pdd, Rs, Z, Z.copy(), orientation_tracked)


def task_pd(ref: TaskReference, k: int, est_pose: HandPose, est_twist: np.ndarray, gains: ControllerGains) -> np.ndarray:
    """PD+feedforward task acceleration (3 or 6 rows) from estimated hand pose and twist."""
    p_r, pd_r, pdd_r, R_r, w_r, wd_r = ref.at(k)
    u = pdd_r + gains.Kpp @ (p_r - est_pose.p) + gains.Kdp @ (pd_r - est_twist[:3])
    if not ref.orientation_tracked:
        return u
    e_o = orientation_error(R_r, est_pose.Rmat)
    u_o = wd_r + gains.Kpo @ e_o + gains.Kdo @ (w_r - est_twist[3:])
    return np.concatenate((u, u_o))


def check_rank(J: np.ndarray) -> np.ndarray:
    """Singular values of J; raises if J has lost row rank."""
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] < RANK_TOL:
        raise RankDeficientJacobian(float(sv[-1]))
    return sv


def pinv_and_nullspace(J: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moore-Penrose inverse and the orthogonal null-space projector ``I - J^+ J`` from one SVD."""
    U, sv, Vt = np.linalg.svd(J)
    m = J.shape[0]
    if sv[-1] < RANK_TOL:
        raise RankDeficientJacobian(float(sv[-1]))
    J_pinv = (Vt[:m].T / sv) @ U.T
    V2 = Vt[m:].T
    return J_pinv, V2 @ V2.T


def resolve_redundancy(u_pd, qdot, J, Jdot_qdot, J_star, N, u_sec, c_w: float) -> tuple[np.ndarray, np.ndarray]:
    """Joint accelerations, split as ``(primary, secondary)`` with ``u_nom = primary + secondary``.

    ``N`` is the null-space projector ``I - J^+ J``. The primary part holds the
    task map and the null-space damping.
    """
    u_sec = np.asarray(u_sec, float)
    ns = np.linalg.norm(u_sec)
    if ns > 0 and np.linalg.norm(J @ u_sec) > 1e-8 * ns + 1e-12:
        raise ValueError("secondary command is not in the null space of the task Jacobian")
    primary = J_star @ (u_pd - Jdot_qdot) - c_w * (N @ qdot)
    return primary, u_sec


def _fit_scale(u: np.ndarray, cap: np.ndarray) -> float:
    # largest s in (0, 1] with |s u_j| <= cap_j
    mag = np.abs(u)
    nz = mag > 0
    if not np.any(nz):
        return 1.0
    with np.errstate(over="ignore"):  # subnormal magnitudes give inf, i.e. no scaling
        return float(min(1.0, np.min(cap[nz] / mag[nz])))


def hierarchical_scale(u_primary, u_secondary, limits, quota: float) -> np.ndarray:
    """Direction-preserving scaling of primary then secondary into the actuator box.

    The primary command may use ``1 - quota`` of each joint's symmetric
    capability; the secondary command fills what the scaled primary leaves.
    """
    if not 0.0 <= quota < 1.0:
        raise ValueError("quota must lie in [0, 1)")
    u_min, u_max = limits
    cap = np.minimum(np.abs(u_min), u_max)
    up = np.asarray(u_primary, float)
    us = np.asarray(u_secondary, float)
    s1 = _fit_scale(up, (1.0 - quota) * cap)
    v1 = s1 * up
    # remaining headroom in the direction each secondary component points
    room = np.where(us >= 0, u_max - v1, v1 - u_min)
    s2 = _fit_scale(us, np.maximum(room, 0.0))
    return v1 + s2 * us
