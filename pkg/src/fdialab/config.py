"""Run configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .plant import PAPER_U_MAX

HOME_Q_DEG = (0.0, 15.0, 180.0, 230.0, 0.0, 55.0, 90.0)


class ConfigError(ValueError):
    pass


@dataclass
class PlantSection:
    n: int = 7
    Ts: float = 0.01
    q_c: float = 1e-8
    sigma_q: float = 5e-5
    sigma_qd: float = 1e-2
    u_max: list = field(default_factory=lambda: list(PAPER_U_MAX))


@dataclass
class DetectorSection:
    tau: float = 71.5735
    alpha_F: float | None = None   # when set, overrides tau


@dataclass
class DampingSection:
    rho_max: float = 1.2
    rho_y: float = 0.01
    exp_m: float = 2.0
    psi: float = 0.99
    eps_vel: float = 1e-4


@dataclass
class ManipSection:
    alpha: float = 10.0
    D_diag: list = field(default_factory=lambda: [1.0] * 7)
    nu_max: float = 5.0
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    armijo_max_backtracks: int = 30
    grad_zero_tol: float = 1e-4
    quota: float = 0.3
    softplus_eps: float = 1e-6
    direction_eps: float = 1e-2   # metres; d stays small while the hand is near its reference
    blend: bool = False


@dataclass
class ControllerSection:
    q_pos: float = 100.0
    q_vel: float = 10.0
    r: float = 1.0
    c_w: float = 1.0


@dataclass
class AttackerSection:
    kp: float = 4.0
    kd: float = 4.0
    zeta: float = 1e-2
    fd_step_q: float = 1e-6
    fd_step_qd: float = 1e-5
    use_noisy_y: bool = True


@dataclass
class TaskSection:
    chain: str = "chain_gen3.yaml"        # relative to the config file, else packaged data
    still_p: list = field(default_factory=lambda: [0.45, 0.05, 0.40])
    still_rpy: list = field(default_factory=lambda: [1.5707963267948966, 0.0, 1.5707963267948966])
    circle_end: list = field(default_factory=lambda: [0.05, 0.45, 0.40])
    q_home_deg: list = field(default_factory=lambda: list(HOME_Q_DEG))
    q0: list | None = None                # initial joints; solved by IK when absent


@dataclass
class ScenarioSection:
    T: int = 5000
    seed: int = 0
    mc_runs_a: int = 100
    mc_runs_b: int = 1
    resync_interval: int = 0


@dataclass
class OutputSection:
    out_dir: str = "runs"
    decimate: int = 1


@dataclass
class RunConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    damping: DampingSection = field(default_factory=DampingSection)
    manip: ManipSection = field(default_factory=ManipSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    attacker: AttackerSection = field(default_factory=AttackerSection)
    task: TaskSection = field(default_factory=TaskSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: str | None = field(default=None, metadata={"serialize": False})

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.metadata.get("serialize", True):
                out[f.name] = dataclasses.asdict(getattr(self, f.name))
        return out

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def chain_path(self) -> Path | None:
        """Resolved chain file, or None for the packaged default."""
        p = Path(self.task.chain)
        if p.is_absolute():
            return p
        if self.base_dir is not None and (Path(self.base_dir) / p).exists():
            return Path(self.base_dir) / p
        return None if p.name == "chain_gen3.yaml" else p


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "base_dir"}


def _coerce(value, default, path: str):
    # keep the type of the default for scalars; lists and None pass through
    if default is None or value is None or isinstance(default, list):
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    try:
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot read {value!r} as {type(default).__name__}") from exc


def from_dict(data: dict | None, base_dir=None) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    cfg = RunConfig(base_dir=None if base_dir is None else str(base_dir))
    for sec, values in data.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"{sec}: unknown section")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"{sec}: expected a mapping")
        obj = getattr(cfg, sec)
        names = {f.name for f in dataclasses.fields(obj)}
        for key, val in values.items():
            if key not in names:
                raise ConfigError(f"{sec}.{key}: unknown key")
            setattr(obj, key, _coerce(val, getattr(obj, key), f"{sec}.{key}"))
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return from_dict(data, base_dir=path.parent)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars or lists."""
    data = cfg.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"{key}: overrides take the form section.key")
        sec, name = parts
        if sec not in data:
            raise ConfigError(f"{sec}: unknown section")
        if name not in data[sec]:
            raise ConfigError(f"{key}: unknown key")
        data[sec][name] = yaml.safe_load(raw)
    return from_dict(copy.deepcopy(data), base_dir=cfg.base_dir)


def validate(cfg: RunConfig) -> None:
    p = cfg.plant
    if p.n < 1 or p.Ts <= 0 or p.q_c < 0 or p.sigma_q <= 0 or p.sigma_qd <= 0:
        raise ConfigError("plant: need n >= 1, Ts > 0, q_c >= 0 and positive sensor sigmas")
    if len(p.u_max) != p.n or min(p.u_max) <= 0:
        raise ConfigError("plant.u_max: need n positive limits")
    if len(cfg.manip.D_diag) != p.n:
        raise ConfigError("manip.D_diag: need n entries")
    if cfg.scenario.T < 1:
        raise ConfigError("scenario.T: must be at least 1")
    if cfg.output.decimate < 1:
        raise ConfigError("output.decimate: must be at least 1")
    if not 0 < cfg.damping.psi < 1:
        raise ConfigError("damping.psi: must lie in (0, 1)")
    if cfg.detector.alpha_F is not None and not 0 < cfg.detector.alpha_F < 1:
        raise ConfigError("detector.alpha_F: must lie in (0, 1)")
    if cfg.task.q0 is not None and len(cfg.task.q0) != p.n:
        raise ConfigError("task.q0: need n joint values")
    for name in ("still_p", "still_rpy", "circle_end"):
        if len(getattr(cfg.task, name)) != 3:
            raise ConfigError(f"task.{name}: need 3 values")
