"""Serial-chain kinematics for revolute manipulators (standard DH convention).

Everything here is a pure function of an immutable :class:`KinematicChain`.
Joint ``i`` rotates about the z-axis of frame ``i-1``; the geometric Jacobian
is expressed in the base frame, linear rows first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from numba import njit

# Central finite-difference steps, shared by every numerical derivative in
# the package. Angles in rad, angular rates in rad/s.
FD_STEP_ANGLE = 1e-6
FD_STEP_RATE = 1e-6
FD_STEP_HESSIAN = 1e-5  # outer step when differentiating an analytic gradient


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _kernel(dh, base, q, with_derivatives):
    """Axes, origins, hand pose, Jacobian and (optionally) dJ/dq in one pass."""
    n = q.shape[0]
    T = base.copy()
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    Ti = np.zeros((4, 4))
    Ti[3, 3] = 1.0
    for i in range(n):
        for r in range(3):
            axes[i, r] = T[r, 2]
            origins[i, r] = T[r, 3]
        a, alpha, d, off = dh[i, 0], dh[i, 1], dh[i, 2], dh[i, 3]
        ct, st = np.cos(q[i] + off), np.sin(q[i] + off)
        ca, sa = np.cos(alpha), np.sin(alpha)
        Ti[0, 0], Ti[0, 1], Ti[0, 2], Ti[0, 3] = ct, -st * ca, st * sa, a * ct
        Ti[1, 0], Ti[1, 1], Ti[1, 2], Ti[1, 3] = st, ct * ca, -ct * sa, a * st
        Ti[2, 0], Ti[2, 1], Ti[2, 2], Ti[2, 3] = 0.0, sa, ca, d
        Tn = np.zeros((4, 4))
        for r in range(4):
            for c in range(4):
                acc = 0.0
                for m in range(4):
                    acc += T[r, m] * Ti[m, c]
                Tn[r, c] = acc
        T = Tn
    p = T[:3, 3].copy()
    R = T[:3, :3].copy()
    J = np.empty((6, n))
    for i in range(n):
        v = _cross(axes[i], p - origins[i])
        for r in range(3):
            J[r, i] = v[r]
            J[3 + r, i] = axes[i, r]
    dJ = np.zeros((n if with_derivatives else 0, 6, n))
    if with_derivatives:
        # dJ[j] = dJ/dq_j. Linear column i: z_j x Jp_i for j < i, z_i x Jp_j
        # for j >= i. Angular column i: z_j x z_i for j < i, else zero.
        for j in range(n):
            for i in range(n):
                if j < i:
                    lin = _cross(axes[j], J[:3, i])
                    ang = _cross(axes[j], axes[i])
                    for r in range(3):
                        dJ[j, r, i] = lin[r]
                        dJ[j, 3 + r, i] = ang[r]
                else:
                    lin = _cross(axes[i], J[:3, j])
                    for r in range(3):
                        dJ[j, r, i] = lin[r]
    return axes, origins, p, R, J, dJ


@dataclass(frozen=True)
class KinematicChain:
    """DH rows ``(a, alpha, d, theta_offset)`` plus a 4x4 base transform."""

    dh: np.ndarray
    base: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "chain"

    def __post_init__(self):
        dh = np.asarray(self.dh, dtype=float)
        base = np.asarray(self.base, dtype=float)
        if dh.ndim != 2 or dh.shape[1] != 4:
            raise ValueError(f"dh must have shape (n, 4), got {dh.shape}")
        if base.shape != (4, 4):
            raise ValueError("base must be a 4x4 homogeneous transform")
        if not (np.all(np.isfinite(dh)) and np.all(np.isfinite(base))):
            raise ValueError("chain parameters must be finite")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "base", base)

    @property
    def n(self) -> int:
        return self.dh.shape[0]

    def translated(self, t) -> "KinematicChain":
        base = self.base.copy()
        base[:3, 3] += np.asarray(t, dtype=float)
        return KinematicChain(self.dh, base, self.name)

    def to_dict(self) -> dict:
        R = self.base[:3, :3]
        return {
            "name": self.name,
            "dh": [dict(zip(("a", "alpha", "d", "theta_offset"), map(float, row))) for row in self.dh],
            "base": {"position": self.base[:3, 3].tolist(), "rotation": R.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        rows = data["dh"]
        dh = np.array([[r["a"], r["alpha"], r["d"], r.get("theta_offset", 0.0)] for r in rows], dtype=float)
        base = np.eye(4)
        b = data.get("base") or {}
        if "rotation" in b:
            base[:3, :3] = np.asarray(b["rotation"], dtype=float)
        elif "rot_x" in b:
            base[:3, :3] = _rot_x(float(b["rot_x"]))
        if "position" in b:
            base[:3, 3] = np.asarray(b["position"], dtype=float)
        return cls(dh, base, data.get("name", "chain"))

    @classmethod
    def from_file(cls, path) -> "KinematicChain":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def default_chain() -> KinematicChain:
    """Gen3-like 7-DOF chain shipped with the package."""
    return KinematicChain.from_file(Path(__file__).parent / "data" / "chain_gen3.yaml")


@dataclass(frozen=True)
class HandPose:
    p: np.ndarray
    Rmat: np.ndarray


@dataclass(frozen=True)
class Frames:
    """Joint axes/origins (base frame) and the end-effector pose at one q."""

    axes: np.ndarray      # (n, 3) rotation axis of each joint
    origins: np.ndarray   # (n, 3) a point on each joint axis
    p: np.ndarray         # (3,)
    Rmat: np.ndarray      # (3, 3)


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise ValueError(f"expected {chain.n} joint values, got shape {q.shape}")
    return q


def frames(chain: KinematicChain, q) -> Frames:
    axes, origins, p, R, _, _ = _kernel(chain.dh, chain.base, _check_q(chain, q), False)
    return Frames(axes, origins, p, R)


def forward_kinematics(chain: KinematicChain, q) -> HandPose:
    _, _, p, R, _, _ = _kernel(chain.dh, chain.base, _check_q(chain, q), False)
    return HandPose(p, R)


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6 x n base-frame Jacobian: rows 0-2 linear, rows 3-5 angular."""
    return _kernel(chain.dh, chain.base, _check_q(chain, q), False)[4]


def jacobian_derivatives(chain: KinematicChain, q) -> np.ndarray:
    """Analytic partials ``dJ/dq_j`` stacked as an (n, 6, n) array."""
    return _kernel(chain.dh, chain.base, _check_q(chain, q), True)[5]


def jacobian_derivatives_fd(chain: KinematicChain, q, h: float = FD_STEP_ANGLE) -> np.ndarray:
    q = _check_q(chain, q)
    out = np.empty((chain.n, 6, chain.n))
    for j in range(chain.n):
        e = np.zeros(chain.n)
        e[j] = h
        out[j] = (geometric_jacobian(chain, q + e) - geometric_jacobian(chain, q - e)) / (2 * h)
    return out


def jacobian_time_derivative(chain: KinematicChain, q, qdot) -> np.ndarray:
    qdot = np.asarray(qdot, dtype=float)
    return np.tensordot(qdot, jacobian_derivatives(chain, q), axes=(0, 0))


def jacobian_time_derivative_fd(chain: KinematicChain, q, qdot, h: float = FD_STEP_RATE) -> np.ndarray:
    q = _check_q(chain, q)
    qdot = np.asarray(qdot, dtype=float)
    return (geometric_jacobian(chain, q + qdot * h) - geometric_jacobian(chain, q - qdot * h)) / (2 * h)


@dataclass(frozen=True)
class KinState:
    """Everything the controller needs from one kinematics evaluation."""

    p: np.ndarray
    Rmat: np.ndarray
    J: np.ndarray       # (6, n)
    dJ: np.ndarray      # (n, 6, n)


def evaluate(chain: KinematicChain, q) -> KinState:
    _, _, p, R, J, dJ = _kernel(chain.dh, chain.base, _check_q(chain, q), True)
    return KinState(p, R, J, dJ)


# --- directional manipulability --------------------------------------------

def directional_manipulability(chain: KinematicChain, q, d) -> float:
    d = np.asarray(d, dtype=float)
    if np.linalg.norm(d) > 1 + 1e-9:
        raise ValueError("direction must have norm <= 1")
    v = geometric_jacobian(chain, q)[:3].T @ d
    return float(v @ v)


def manip_cost(chain: KinematicChain, q, d) -> float:
    w = directional_manipulability(chain, q, d)
    return 0.5 * w * w


def manip_cost_gradient_from(J: np.ndarray, dJ: np.ndarray, d: np.ndarray) -> tuple[float, np.ndarray]:
    """Value of w and gradient of C = w^2/2 from precomputed J and dJ/dq."""
    v = J[:3].T @ d                    # Jp^T d
    w = float(v @ v)
    dv = dJ[:, :3, :].transpose(0, 2, 1) @ d   # (n_j, n): dJp_j^T d
    return w, 2.0 * w * (dv @ v)


def manip_cost_gradient(chain: KinematicChain, q, d, method: str = "analytic") -> np.ndarray:
    """Gradient of ``C = 0.5 * (d^T Jp Jp^T d)^2`` with the direction frozen.

    ``method="fd"`` builds ``dM/dq_j`` from central differences of ``Jp``
    instead of the closed-form Jacobian derivatives.
    """
    d = np.asarray(d, dtype=float)
    _, _, _, _, J, dJ = _kernel(chain.dh, chain.base, _check_q(chain, q), method == "analytic")
    if method == "fd":
        dJ = jacobian_derivatives_fd(chain, q)
    elif method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    return manip_cost_gradient_from(J, dJ, d)[1]


def manip_cost_hessian(chain: KinematicChain, q, d, h: float = FD_STEP_HESSIAN) -> np.ndarray:
    """Symmetrized central-difference Hessian of the frozen-direction cost."""
    q = np.asarray(q, dtype=float)
    n = chain.n
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (manip_cost_gradient(chain, q + e, d) - manip_cost_gradient(chain, q - e, d)) / (2 * h)
    return 0.5 * (H + H.T)


# --- orientation error and IK ------------------------------------------------

def quaternion_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``, largest-pivot extraction."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
        quat = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        quat = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        quat = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        quat = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if quat[0] < 0:
        quat = -quat
    return quat / np.linalg.norm(quat)


def orientation_error(R_ref: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``sin(theta/2) * axis`` of ``R_ref @ R.T`` with theta in [0, pi].

    This is the vector part of the relative unit quaternion, which stays well
    defined at theta = 0 (zero error) and theta = pi.
    """
    return quaternion_from_matrix(R_ref @ R.T)[1:]


def rpy_to_matrix(rpy) -> np.ndarray:
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_rpy(R: np.ndarray) -> np.ndarray:
    return np.array([np.arctan2(R[2, 1], R[2, 2]), -np.arcsin(np.clip(R[2, 0], -1, 1)), np.arctan2(R[1, 0], R[0, 0])])


def solve_ik(chain: KinematicChain, p_target, R_target, q0, damping: float = 1e-2,
             tol: float = 1e-12, max_iter: int = 2000) -> np.ndarray:
    """Damped least-squares position+orientation IK from ``q0``."""
    q = np.asarray(q0, dtype=float).copy()
    p_target = np.asarray(p_target, dtype=float)
    for _ in range(max_iter):
        _, _, p, R, J, _ = _kernel(chain.dh, chain.base, q, False)
        err = np.concatenate((p_target - p, 2.0 * orientation_error(R_target, R)))
        if err @ err < tol:
            return q
        q = q + J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(6), err)
    raise RuntimeError(f"IK did not converge, residual {np.sqrt(err @ err):.3e}")
