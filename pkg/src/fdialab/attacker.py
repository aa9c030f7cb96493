"""Optimal stealthy sensor injection, synthesized one increment per step.

The attacker clones the live world, predicts the closed loop two steps ahead
without noise, linearizes the hand acceleration at ``k + 2`` in the injected
vector by central differences, and solves a QCQP that trades tracking of its
own hand reference against the chi-square stealth constraint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .closedloop import LoopContext, World, advance, compute_control, hand_state, maybe_resync
from .controller import TaskReference
from .qcqp import InfeasibleProblem, QcqpProblem, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackerConfig:
    Kp: np.ndarray
    Kd: np.ndarray
    zeta: float = 1e-2
    tau: float = 71.5735
    fd_step_q: float = 1e-6
    fd_step_qd: float = 1e-5
    use_noisy_y: bool = True
    stealth_margin: float = 1e-9   # relative; keeps rounding from pushing z a hair over tau

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if not 0 <= self.stealth_margin < 1:
            raise ValueError("stealth_margin must lie in [0, 1)")
        if self.tau <= 0 or self.fd_step_q <= 0 or self.fd_step_qd <= 0:
            raise ValueError("tau and finite-difference steps must be positive")

    @classmethod
    def default(cls, kp: float = 4.0, kd: float = 4.0, **kw) -> "AttackerConfig":
        return cls(kp * np.eye(3), kd * np.eye(3), **kw)


def increment_map(n: int, Ts: float) -> np.ndarray:
    """``M = [I; I/Ts]``: joint increment to full sensor vector."""
    return np.vstack((np.eye(n), np.eye(n) / Ts))


def baseline_attack(a_q: np.ndarray) -> np.ndarray:
    return np.concatenate((a_q, np.zeros_like(a_q)))


def rollout(snap: World, ctx: LoopContext, attack_seq, steps: int, v_first=None) -> list[World]:
    """Noise-free closed-loop prediction for ``steps`` ticks; returns the worlds after each tick.

    ``v_first`` is the measurement noise realized at the first tick (the
    attacker observes ``y_k``); later ticks are noise-free.
    """
    if steps not in (1, 2):
        raise ValueError("rollouts are one or two steps ahead")
    out = []
    w = snap
    m = ctx.model
    for j in range(steps):
        w = maybe_resync(w, ctx)
        ctrl = compute_control(w, ctx, want_cost=False)
        y = m.C @ w.x
        if j == 0 and v_first is not None:
            y = y + v_first
        a = np.asarray(attack_seq[j], float) if j < len(attack_seq) else np.zeros(m.p)
        w, _ = advance(w, ctx, ctrl.u, y + a, None, w.a_q)
        out.append(w)
    return out


def hand_acceleration(ctx: LoopContext, x_prev: np.ndarray, x_next: np.ndarray) -> np.ndarray:
    """Backward difference of the hand velocity over one sample."""
    _, v0 = hand_state(ctx, x_prev)
    _, v1 = hand_state(ctx, x_next)
    return (v1 - v0) / ctx.model.Ts


def attacker_reference(p_sim, pd_sim, pA, pdA, cfg: AttackerConfig) -> np.ndarray:
    return cfg.Kp @ (pA - p_sim) + cfg.Kd @ (pdA - pd_sim)


@dataclass(frozen=True)
class Sensitivity:
    Z: np.ndarray          # 3 x 2n
    G: np.ndarray          # 3 x n
    pdd_base: np.ndarray   # predicted hand acceleration at k+2 under the baseline attack
    p_sim: np.ndarray      # predicted hand position at k+1
    pd_sim: np.ndarray
    x1: np.ndarray         # predicted plant state at k+1


def _second_tick_accel(w1: World, ctx: LoopContext) -> np.ndarray:
    w1 = maybe_resync(w1, ctx)
    ctrl = compute_control(w1, ctx, want_cost=False)
    m = ctx.model
    x2 = m.A @ w1.x + m.B @ ctrl.u
    return hand_acceleration(ctx, w1.x, x2)


def sensitivity(snap: World, ctx: LoopContext, u_k: np.ndarray, y_k: np.ndarray, cfg: AttackerConfig,
                scale: float = 1.0) -> Sensitivity:
    """Central-difference Jacobian of the k+2 hand acceleration in the injected vector.

    Uses that ``x_{k+1}``, ``x_tilde_{k+1}`` and ``u_k`` do not depend on
    ``a_k`` while ``x_hat_{k+1}`` is affine in it (slope ``L``), so each probe
    costs one controller evaluation. ``u_k`` is the command of the live tick.
    """
    m = ctx.model
    n = m.n
    a_bar = baseline_attack(snap.a_q)
    w1, _ = advance(snap, ctx, u_k, y_k + a_bar, None, snap.a_q)
    p_sim, pd_sim = hand_state(ctx, w1.x)
    pdd0 = _second_tick_accel(w1, ctx)
    h = scale * np.concatenate((np.full(n, cfg.fd_step_q), np.full(n, cfg.fd_step_qd)))
    Z = np.empty((3, 2 * n))
    L = ctx.gains.L
    for i in range(2 * n):
        dx = L[:, i] * h[i]
        wp = World(w1.k, w1.x, w1.x_hat + dx, w1.x_tilde, w1.k_since_resync, w1.a_q)
        wm = World(w1.k, w1.x, w1.x_hat - dx, w1.x_tilde, w1.k_since_resync, w1.a_q)
        Z[:, i] = (_second_tick_accel(wp, ctx) - _second_tick_accel(wm, ctx)) / (2 * h[i])
    G = Z @ increment_map(n, m.Ts)
    return Sensitivity(Z, G, pdd0, p_sim, pd_sim, w1.x)


def sensitivity_by_rollout(snap: World, ctx: LoopContext, v_k: np.ndarray, cfg: AttackerConfig) -> np.ndarray:
    """Reference implementation of Z through full two-step rollouts (slow; used for checks)."""
    n = ctx.model.n
    a_bar = baseline_attack(snap.a_q)
    h = np.concatenate((np.full(n, cfg.fd_step_q), np.full(n, cfg.fd_step_qd)))
    Z = np.empty((3, 2 * n))
    for i in range(2 * n):
        acc = []
        for sgn in (1.0, -1.0):
            a = a_bar.copy()
            a[i] += sgn * h[i]
            w1, w2 = rollout(snap, ctx, [a], 2, v_first=v_k)
            acc.append(hand_acceleration(ctx, w1.x, w2.x))
        Z[:, i] = (acc[0] - acc[1]) / (2 * h[i])
    return Z


def richardson_agreement(snap: World, ctx: LoopContext, u_k, y_k, cfg: AttackerConfig) -> float:
    """Relative change of Z when the difference steps are halved."""
    Z1 = sensitivity(snap, ctx, u_k, y_k, cfg).Z
    Z2 = sensitivity(snap, ctx, u_k, y_k, cfg, scale=0.5).Z
    return float(np.linalg.norm(Z1 - Z2) / max(np.linalg.norm(Z2), 1e-300))


@dataclass(frozen=True)
class AttackStep:
    a: np.ndarray          # injected sensor vector a_k
    delta: np.ndarray
    a_q: np.ndarray        # new position baseline
    lam: float
    active: bool
    z_model: float         # chi-square statistic the attacker predicts for its own injection
    fallback: bool
    target: np.ndarray
    pdd_base: np.ndarray


def build_qcqp(sens: Sensitivity, target: np.ndarray, c: np.ndarray, ctx: LoopContext, cfg: AttackerConfig) -> QcqpProblem:
    m = ctx.model
    M = increment_map(m.n, m.Ts)
    chol = (ctx.gains.Sigma_chol, True)
    SiM = sla.cho_solve(chol, M)
    Sic = sla.cho_solve(chol, c)
    H = sens.G.T @ sens.G + cfg.zeta * np.eye(m.n)
    g = -sens.G.T @ (target - sens.pdd_base)
    Qc = M.T @ SiM
    Qc = 0.5 * (Qc + Qc.T)
    tau = cfg.tau * (1.0 - cfg.stealth_margin)
    return QcqpProblem(0.5 * (H + H.T), g, Qc, 2.0 * (M.T @ Sic), float(c @ Sic) - tau)


def synthesize_step(snap: World, ctx: LoopContext, u_k: np.ndarray, y_k: np.ndarray,
                    ref_A: TaskReference, cfg: AttackerConfig, y_clean: np.ndarray | None = None) -> AttackStep:
    """One increment of the attack at step ``snap.k``.

    ``y_k`` is the true (noisy) measurement, ``u_k`` the command of this tick.
    With ``cfg.use_noisy_y`` false the innovation baseline uses ``y_clean``.
    """
    m = ctx.model
    n = m.n
    sens = sensitivity(snap, ctx, u_k, y_k, cfg)
    pA, pdA = ref_A.at(snap.k + 1)[:2]
    target = attacker_reference(sens.p_sim, sens.pd_sim, pA, pdA, cfg)
    y_c = y_k if (cfg.use_noisy_y or y_clean is None) else y_clean
    c = y_c + baseline_attack(snap.a_q) - m.C @ snap.x_hat
    prob = build_qcqp(sens, target, c, ctx, cfg)
    fallback = False
    try:
        sol = solve(prob)
        delta, lam, active = sol.x, sol.lam, sol.active
    except InfeasibleProblem:
        # even the least detectable increment exceeds tau; inject that one
        delta, _ = prob.constraint_minimum()
        lam, active, fallback = float("inf"), True, True
        log.warning("stealth constraint infeasible at k=%d; using the least detectable increment", snap.k)
    M = increment_map(n, m.Ts)
    a = baseline_attack(snap.a_q) + M @ delta
    r = M @ delta + c
    z_model = float(r @ sla.cho_solve((ctx.gains.Sigma_chol, True), r))
    return AttackStep(a, delta, snap.a_q + delta, lam, active, z_model, fallback, target, sens.pdd_base)
