"""Closed-loop world state and the attack-independent part of one control tick.

One tick at step k runs: measurement, attack, innovation and chi-square
statistic, projected residual and score, manipulability defense, task
controller with hierarchical scaling, virtual damping, then plant, estimator
and projector updates with the applied command. The command ``u_k`` depends
on ``x_hat_k`` and ``x_tilde_k`` only, so :func:`compute_control` is shared by
the live loop and by the attacker's noise-free rollouts.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import damping as vd
from . import kinematics as kin
from . import manipulability as mr
from .controller import ControllerGains, TaskReference, hierarchical_scale, pinv_and_nullspace, resolve_redundancy, task_pd
from .damping import DampingConfig
from .detector import DetectorConfig
from .estimator import EstimatorGains
from .manipulability import ManipConfig
from .plant import PlantModel, saturate
from .projector import CovarianceTable


@dataclass(frozen=True)
class Defenses:
    chi2_on: bool = False
    vd_on: bool = False
    mr_on: bool = False


@dataclass(frozen=True)
class LoopContext:
    """Immutable ingredients of the closed loop, shared by the live world and rollouts."""
    model: PlantModel
    gains: EstimatorGains
    cov: CovarianceTable
    chain: kin.KinematicChain
    ctrl_gains: ControllerGains
    ref: TaskReference
    defenses: Defenses
    damping: DampingConfig
    manip: ManipConfig
    detector: DetectorConfig
    resync_interval: int = 0   # 0 = only at k = 0


@dataclass(frozen=True)
class World:
    """Complete closed-loop state at the start of step k."""
    k: int
    x: np.ndarray
    x_hat: np.ndarray
    x_tilde: np.ndarray
    k_since_resync: int
    a_q: np.ndarray            # position channels of the previous attack

    def copy(self) -> "World":
        return World(self.k, self.x.copy(), self.x_hat.copy(), self.x_tilde.copy(), self.k_since_resync, self.a_q.copy())


@dataclass(frozen=True)
class ControlOut:
    u: np.ndarray              # applied command
    u_nom_sat: np.ndarray
    u_d: np.ndarray
    u_sec: np.ndarray
    z_tilde: float
    phi: float
    cost: float                # manipulability cost C at the projected configuration
    w_manip: float
    jstar_err: float           # |J J* - I|_max
    null_purity: float         # |J u_sec| / |u_sec|
    qdot_tilde: np.ndarray
    sigma_min: float


def split(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    return x[:n], x[n:]


def maybe_resync(world: World, ctx: LoopContext) -> World:
    if ctx.resync_interval > 0 and world.k_since_resync >= ctx.resync_interval:
        return replace(world, x_tilde=world.x_hat.copy(), k_since_resync=0)
    return world


def projected_score(world: World, ctx: LoopContext) -> float:
    if world.k_since_resync == 0:
        return 0.0  # r_tilde is identically zero right after a resync
    return ctx.cov.score(world.x_hat - world.x_tilde, world.k_since_resync)


def compute_control(world: World, ctx: LoopContext, want_cost: bool = True) -> ControlOut:
    n = ctx.model.n
    q_hat, qd_hat = split(world.x_hat, n)
    q_til, qd_til = split(world.x_tilde, n)
    ref = ctx.ref
    rows = ref.rows

    ks = kin.evaluate(ctx.chain, q_hat)
    J = ks.J[:rows]
    twist = ks.J @ qd_hat
    Jdot_qdot = (np.tensordot(qd_hat, ks.dJ, axes=(0, 0)) @ qd_hat)[:rows]
    J_pinv, N = pinv_and_nullspace(J)

    z_til = projected_score(world, ctx)
    mr_on = ctx.defenses.mr_on
    u_sec = np.zeros(n)
    J_star = J_pinv
    cost = w_manip = float("nan")
    if mr_on or want_cost:
        kt = kin.evaluate(ctx.chain, q_til)
        d = mr.estimate_direction(kt.p, ref.at(world.k)[0], ctx.manip.direction_eps).d
        w_manip, grad = kin.manip_cost_gradient_from(kt.J, kt.dJ, d)
        cost = 0.5 * w_manip * w_manip
        if mr_on:
            def cost_fn(q):
                return kin.manip_cost(ctx.chain, q, d)
            step = mr.null_space_command(N, grad, cost_fn, q_til, ctx.manip)
            u_sec = step.u_sec
            gnorm = float(np.linalg.norm(grad))
            H = None
            if gnorm <= 2 * ctx.manip.grad_zero_tol and ctx.manip.alpha > 0:
                H = kin.manip_cost_hessian(ctx.chain, q_til, d)
            W = mr.weighting_matrix(ctx.manip, gnorm, H)
            if not np.array_equal(W, np.eye(n)):
                J_star = mr.weighted_pseudoinverse(J, W)

    u_pd = task_pd(ref, world.k, kin.HandPose(ks.p, ks.Rmat), twist, ctx.ctrl_gains)
    primary, secondary = resolve_redundancy(u_pd, qd_hat, J, Jdot_qdot, J_star, N, u_sec, ctx.ctrl_gains.c_w)
    quota = ctx.manip.quota if mr_on else 0.0
    u_nom = hierarchical_scale(primary, secondary, ctx.model.limits, quota)
    u_nom_sat = saturate(u_nom, ctx.model.limits)

    if ctx.defenses.vd_on:
        f = vd.phi(z_til, ctx.damping)
        u_ideal = vd.ideal_damping(u_nom_sat, qd_til, z_til, ctx.damping)
        u_d = vd.headroom_clip(u_ideal, u_nom_sat, ctx.model.limits)
        u = vd.final_control(u_nom_sat, u_d, ctx.model.limits)
    else:
        f = 0.0
        u_d = np.zeros(n)
        u = u_nom_sat

    ns = float(np.linalg.norm(u_sec))
    purity = float(np.linalg.norm(J @ u_sec) / ns) if ns > 0 else 0.0
    jerr = float(np.abs(J @ J_star - np.eye(rows)).max())
    sv_min = float(np.linalg.svd(J, compute_uv=False)[-1])
    return ControlOut(u, u_nom_sat, u_d, u_sec, z_til, f, cost, w_manip, jerr, purity, qd_til, sv_min)


def advance(world: World, ctx: LoopContext, u: np.ndarray, y_tilde: np.ndarray,
            w: np.ndarray | None, a_q: np.ndarray) -> tuple[World, np.ndarray]:
    """Plant, estimator and projector updates; returns the next world and the innovation."""
    m = ctx.model
    x_next = m.A @ world.x + m.B @ u
    if w is not None:
        x_next = x_next + w
    r = y_tilde - m.C @ world.x_hat
    x_hat_next = m.A @ world.x_hat + m.B @ u + ctx.gains.L @ r
    x_tilde_next = m.A @ world.x_tilde + m.B @ u
    nxt = World(world.k + 1, x_next, x_hat_next, x_tilde_next, world.k_since_resync + 1, a_q)
    return nxt, r


def hand_state(ctx: LoopContext, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True hand position and linear velocity for plant state ``x``."""
    n = ctx.model.n
    q, qd = split(x, n)
    _, _, p, _, J, _ = kin._kernel(ctx.chain.dh, ctx.chain.base, q, False)
    return p, J[:3] @ qd
