"""Scenario grid, the live tick loop, metrics and Monte Carlo aggregation."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kinematics as kin
from .attacker import AttackerConfig, richardson_agreement, synthesize_step
from .closedloop import Defenses, LoopContext, World, advance, compute_control, hand_state, maybe_resync
from .config import RunConfig
from .controller import ControllerGains, TaskReference, circle_reference, still_reference
from .damping import DampingConfig
from .detector import DetectorConfig, mahalanobis
from .estimator import steady_state_gains
from .manipulability import ManipConfig
from .plant import PlantModel, draw_noise
from .projector import CovarianceTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    nominal_task: str          # "circle" or "still"
    attacker_task: str | None  # "circle" or None
    chi2_on: bool
    vd_on: bool
    mr_on: bool
    T: int = 5000
    seed: int = 0
    mc_runs: int = 1

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.nominal_task not in ("circle", "still") or self.attacker_task not in (None, "circle", "still"):
            raise ValueError("unknown task name")

    @property
    def attacked(self) -> bool:
        return self.attacker_task is not None


# id: (nominal, attacker, chi2, VD, MR)
TABLE1 = {
    "A1": ("circle", None, False, False, False),
    "A2": ("circle", None, False, True, False),
    "A3": ("circle", None, False, True, True),
    "B1": ("still", "circle", False, False, False),
    "B2": ("still", "circle", True, False, False),
    "B3": ("still", "circle", True, True, False),
    "B4": ("still", "circle", True, True, True),
}


def scenario(sid: str, T: int = 5000, seed: int = 0, mc_runs: int | None = None) -> ScenarioConfig:
    if sid not in TABLE1:
        raise KeyError(f"unknown scenario {sid!r}; expected one of {', '.join(TABLE1)}")
    nom, att, c2, v, m = TABLE1[sid]
    if mc_runs is None:
        mc_runs = 100 if sid.startswith("A") else 1
    return ScenarioConfig(sid, nom, att, c2, v, m, T, seed, mc_runs)


# --- building the closed loop --------------------------------------------

@dataclass(frozen=True)
class Setup:
    ctx: LoopContext
    q0: np.ndarray
    ref_nominal: TaskReference
    ref_attacker: TaskReference | None
    attacker: AttackerConfig
    scenario: ScenarioConfig


def load_chain(cfg: RunConfig) -> kin.KinematicChain:
    path = cfg.chain_path()
    return kin.default_chain() if path is None else kin.KinematicChain.from_file(path)


def initial_configuration(cfg: RunConfig, chain: kin.KinematicChain) -> np.ndarray:
    if cfg.task.q0 is not None:
        return np.asarray(cfg.task.q0, float)
    t = cfg.task
    return kin.solve_ik(chain, np.asarray(t.still_p, float), kin.rpy_to_matrix(t.still_rpy), np.deg2rad(t.q_home_deg))


def _task(name: str, cfg: RunConfig, T: int, R_still) -> TaskReference:
    t = cfg.task
    if name == "still":
        return still_reference(t.still_p, R_still, T, orientation_tracked=True)
    return circle_reference(t.still_p, t.circle_end, T, cfg.plant.Ts, R=R_still, orientation_tracked=False)


@lru_cache(maxsize=4)
def _estimation(plant_key):
    n, Ts, q_c, sq, sqd, u_max = plant_key
    model = PlantModel.double_integrator(n, Ts, q_c, sq, sqd, u_max=np.array(u_max))
    return model, steady_state_gains(model)


@lru_cache(maxsize=4)
def _cov_table(plant_key, K_max):
    model, gains = _estimation(plant_key)
    return CovarianceTable(gains, model, K_max)


def build(cfg: RunConfig, sc: ScenarioConfig) -> Setup:
    p = cfg.plant
    key = (p.n, p.Ts, p.q_c, p.sigma_q, p.sigma_qd, tuple(p.u_max))
    model, gains = _estimation(key)
    K_max = sc.T if cfg.scenario.resync_interval <= 0 else min(sc.T, cfg.scenario.resync_interval)
    cov = _cov_table(key, max(K_max, 1))
    chain = load_chain(cfg)
    if chain.n != p.n:
        raise ValueError(f"chain has {chain.n} joints but the plant has {p.n}")
    d = cfg.damping
    damp = DampingConfig.from_confidence(d.psi, 2 * p.n, rho_max=d.rho_max, rho_y=d.rho_y, exp_m=d.exp_m, eps_vel=d.eps_vel)
    m = cfg.manip
    manip = ManipConfig(m.alpha, tuple(m.D_diag), m.nu_max, m.armijo_c, m.armijo_beta, m.armijo_max_backtracks,
                        m.grad_zero_tol, m.quota, m.softplus_eps, m.direction_eps, m.blend)
    det = (DetectorConfig.from_alpha(cfg.detector.alpha_F, 2 * p.n) if cfg.detector.alpha_F is not None
           else DetectorConfig.from_tau(cfg.detector.tau, 2 * p.n))
    c = cfg.controller
    ctrl = ControllerGains.from_lqr(p.Ts, c.q_pos, c.q_vel, c.r, c.c_w)
    R_still = kin.rpy_to_matrix(cfg.task.still_rpy)
    ref = _task(sc.nominal_task, cfg, sc.T, R_still)
    ref_A = _task(sc.attacker_task, cfg, sc.T, R_still) if sc.attacked else None
    a = cfg.attacker
    att = AttackerConfig.default(a.kp, a.kd, zeta=a.zeta, tau=det.tau, fd_step_q=a.fd_step_q,
                                 fd_step_qd=a.fd_step_qd, use_noisy_y=a.use_noisy_y)
    ctx = LoopContext(model, gains, cov, chain, ctrl, ref, Defenses(sc.chi2_on, sc.vd_on, sc.mr_on),
                      damp, manip, det, cfg.scenario.resync_interval)
    return Setup(ctx, initial_configuration(cfg, chain), ref, ref_A, att, sc)


# --- running ---------------------------------------------------------------

class ScenarioError(RuntimeError):
    def __init__(self, sid: str, k: int, cause: Exception):
        super().__init__(f"scenario {sid} failed at step {k}: {type(cause).__name__}: {cause}")
        self.k = k
        self.cause = cause


TRACE_COLUMNS_SCALAR = (
    "samples", "gainActiveDissipation_q", "kinNrgTot", "costVal", "ADS_z", "handVelocity_l2",
    "ADS_z_tilde", "alarm", "manipulability_w", "power_tot", "hand_err", "hand_err_attacker",
    "z_model", "qcqp_lambda", "jstar_err", "null_purity", "sigma_min",
)


def initial_world(setup: Setup, rng: np.random.Generator) -> World:
    ctx = setup.ctx
    n = ctx.model.n
    x0 = np.concatenate((setup.q0, np.zeros(n)))
    # initial estimation error drawn from the steady-state covariance
    e0 = np.linalg.cholesky(ctx.gains.P) @ rng.standard_normal(2 * n)
    x_hat0 = x0 - e0
    return World(0, x0, x_hat0, x_hat0.copy(), 0, np.zeros(n))


def run(setup: Setup, seed: int | None = None, check: bool = True, steps: int | None = None) -> dict:
    """Simulate one scenario; returns the trace as a dict of arrays.

    ``steps`` stops early (references keep the full horizon).
    """
    ctx = setup.ctx
    sc = setup.scenario
    m = ctx.model
    n = m.n
    T = sc.T if steps is None else min(steps, sc.T)
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    world = initial_world(setup, rng)

    tr = {c: np.zeros(T) for c in TRACE_COLUMNS_SCALAR}
    vec = {name: np.zeros((T, n)) for name in ("q", "qd", "u", "u_d", "u_nom_sat", "qd_tilde", "a_q")}
    tr["p"] = np.zeros((T, 3))
    tr["p_ref"] = np.zeros((T, 3))
    tr["p_att"] = np.full((T, 3), np.nan)
    tr["samples"] = np.arange(T, dtype=float)
    richardson = float("nan")

    for k in range(T):
        try:
            world = maybe_resync(world, ctx)
            w, v = draw_noise(m, rng)
            y = m.C @ world.x + v
            ctrl = compute_control(world, ctx)
            z_model = lam = np.nan
            if sc.attacked:
                if k == 0:
                    # step-halving self-check of the attacker's difference steps
                    richardson = richardson_agreement(world, ctx, ctrl.u, y, setup.attacker)
                    if richardson > 0.01:
                        log.warning("sensitivity changes by %.2g%% when the steps are halved", 100 * richardson)
                st = synthesize_step(world, ctx, ctrl.u, y, setup.ref_attacker, setup.attacker,
                                     y_clean=m.C @ world.x)
                a, a_q = st.a, st.a_q
                z_model, lam = st.z_model, st.lam
            else:
                a, a_q = np.zeros(m.p), world.a_q
            y_tilde = y + a
            p_true, pd_true = hand_state(ctx, world.x)
            nxt, r = advance(world, ctx, ctrl.u, y_tilde, w, a_q)
            z = mahalanobis(r, chol=ctx.gains.Sigma_chol)
        except Exception as exc:  # noqa: BLE001 - annotate with the step and re-raise
            raise ScenarioError(sc.id, k, exc) from exc

        if check:
            if np.any(ctrl.u_d * ctrl.qdot_tilde > 0):
                raise ScenarioError(sc.id, k, AssertionError("damping injected positive projected power"))
            if sc.mr_on and (ctrl.jstar_err > 1e-6 or ctrl.null_purity > 1e-8):
                raise ScenarioError(sc.id, k, AssertionError("weighted pseudoinverse or null-space purity check failed"))

        q, qd = world.x[:n], world.x[n:]
        tr["gainActiveDissipation_q"][k] = ctrl.phi
        tr["kinNrgTot"][k] = 0.5 * float(qd @ qd)
        tr["costVal"][k] = ctrl.cost
        tr["ADS_z"][k] = z
        tr["handVelocity_l2"][k] = float(np.linalg.norm(pd_true))
        tr["ADS_z_tilde"][k] = ctrl.z_tilde
        tr["alarm"][k] = float(sc.chi2_on and z > ctx.detector.tau)
        tr["manipulability_w"][k] = ctrl.w_manip
        tr["power_tot"][k] = float(np.sum(np.abs(ctrl.u * qd)))
        p_ref = ctx.ref.at(k)[0]
        tr["hand_err"][k] = float(np.linalg.norm(p_ref - p_true))
        tr["p"][k] = p_true
        tr["p_ref"][k] = p_ref
        if sc.attacked:
            pA = setup.ref_attacker.at(k)[0]
            tr["p_att"][k] = pA
            tr["hand_err_attacker"][k] = float(np.linalg.norm(pA - p_true))
        else:
            tr["hand_err_attacker"][k] = np.nan
        tr["z_model"][k] = z_model
        tr["qcqp_lambda"][k] = lam
        tr["jstar_err"][k] = ctrl.jstar_err
        tr["null_purity"][k] = ctrl.null_purity
        tr["sigma_min"][k] = ctrl.sigma_min
        vec["q"][k], vec["qd"][k] = q, qd
        vec["u"][k], vec["u_d"][k] = ctrl.u, ctrl.u_d
        vec["u_nom_sat"][k], vec["qd_tilde"][k] = ctrl.u_nom_sat, ctrl.qdot_tilde
        vec["a_q"][k] = a_q
        world = nxt

    tr.update(vec)
    tr["meta"] = {"id": sc.id, "T": T, "Ts": m.Ts, "seed": sc.seed if seed is None else seed,
                  "tau": ctx.detector.tau, "attacked": sc.attacked, "vd_on": sc.vd_on, "mr_on": sc.mr_on,
                  "chi2_on": sc.chi2_on, "rho_y": ctx.damping.rho_y,
                  "richardson_k0": richardson}
    return tr


def run_scenario(cfg: RunConfig, sid: str, seed: int | None = None, T: int | None = None) -> dict:
    sc = scenario(sid, T=cfg.scenario.T if T is None else T, seed=cfg.scenario.seed if seed is None else seed)
    return run(build(cfg, sc))


# --- metrics ---------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    rms_nominal: float
    mnd_nominal: float
    rms_attacker: float | None
    mnd_attacker: float | None
    qdot_mean: float
    qdot_max: float
    power_mean: float
    power_max: float
    path_length: float
    E_inj: float | None
    E_diss: float | None
    alarm_count: int | None
    max_z: float
    max_z_tilde: float
    mean_w: float
    claim2_frequency: float | None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def rms(err) -> float:
    err = np.asarray(err, float)
    return float(math.sqrt(np.mean(err**2)))


def compute_metrics(trace: dict) -> MetricsReport:
    meta = trace["meta"]
    Ts = meta["Ts"]
    e = trace["hand_err"]
    qd = trace["qd"]
    u = trace["u"]
    u_d = trace["u_d"]
    qn = np.linalg.norm(qd, axis=1)
    P = np.sum(np.abs(u * qd), axis=1)
    path = float(np.sum(np.linalg.norm(np.diff(trace["p"], axis=0), axis=1)))
    rms_a = mnd_a = None
    if meta["attacked"]:
        ea = trace["hand_err_attacker"]
        rms_a, mnd_a = rms(ea), float(np.max(ea))
    E_inj = E_diss = claim2 = None
    if meta["vd_on"]:
        pw = np.sum(qd * u_d, axis=1)
        E_inj = float(np.sum(np.maximum(0.0, pw)) * Ts)
        E_diss = float(np.sum(np.abs(np.minimum(0.0, pw))) * Ts)
        qdt = trace["qd_tilde"]
        lhs = np.sum(np.abs(u_d * qdt), axis=1)
        rhs = meta["rho_y"] * np.sum(np.abs(trace["u_nom_sat"] * qdt), axis=1)
        claim2 = float(np.mean(lhs <= rhs))
    alarms = int(np.sum(trace["alarm"])) if meta["chi2_on"] else None
    return MetricsReport(
        rms(e), float(np.max(e)), rms_a, mnd_a,
        float(np.mean(qn)), float(np.max(qn)), float(np.mean(P)), float(np.max(P)), path,
        E_inj, E_diss, alarms, float(np.max(trace["ADS_z"])), float(np.max(trace["ADS_z_tilde"])),
        float(np.nanmean(trace["manipulability_w"])), claim2,
    )


# --- Monte Carlo -----------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    mean: dict
    stderr: dict
    runs: list          # per-run metric dicts (None entries for failed runs)
    seeds: list
    failures: list      # (seed, message)

    @property
    def n_ok(self) -> int:
        return sum(r is not None for r in self.runs)


def aggregate(reports: list[dict]) -> tuple[dict, dict]:
    ok = [r for r in reports if r is not None]
    mean, se = {}, {}
    if not ok:
        return mean, se
    for key in ok[0]:
        vals = [r[key] for r in ok if r[key] is not None]
        if not vals:
            mean[key] = se[key] = None
            continue
        arr = np.asarray(vals, float)
        mean[key] = float(arr.mean())
        se[key] = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return mean, se


def monte_carlo(cfg: RunConfig, sid: str, runs: int, seed0: int | None = None, T: int | None = None,
                keep_traces: bool = False):
    """Independently seeded runs ``seed0, seed0 + 1, ...``; failures are recorded, not raised."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    seed0 = cfg.scenario.seed if seed0 is None else seed0
    sc = scenario(sid, T=cfg.scenario.T if T is None else T, seed=seed0, mc_runs=runs)
    setup = build(cfg, sc)
    reports, seeds, failures, traces = [], [], [], []
    for i in range(runs):
        s = seed0 + i
        seeds.append(s)
        try:
            tr = run(setup, seed=s)
            reports.append(compute_metrics(tr).to_dict())
            if keep_traces:
                traces.append(tr)
        except ScenarioError as exc:
            log.error("run with seed %d failed: %s", s, exc)
            reports.append(None)
            failures.append((s, str(exc)))
    mean, se = aggregate(reports)
    res = MonteCarloResult(mean, se, reports, seeds, failures)
    return (res, traces) if keep_traces else res
