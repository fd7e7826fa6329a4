"""Experiment configuration files (TOML).

Matrices may be written as a scalar (times identity), a list of six diagonal
entries, or a full nested 6x6 list.  A chain is given inline under
``[chain]`` or by path with ``chain_file`` (relative to the config file).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import tomli

from ..allocator import ImpedanceSpec
from ..body import InertialParams, inertia_from_vech
from ..chain import ChainModel, ChainState, JointDesc, forward_kinematics, rotation_xyz
from ..controller import ControlGains
from .trajectory import QuinticTrajectory, TrajectoryPlan
from .wall import VirtualWall

TIP_FORCE_MODES = ("desired", "wall_model")
PSI_INIT_MODES = ("zero", "on_surface")
PLANTS = ("chain", "ideal")


class ConfigError(ValueError):
    pass


def _vec(x, n: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise ConfigError(f"{name}: expected {n} values, got shape {a.shape}")
    return a


def _mat6(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0 or a.ndim == 1:
        return np.diag(_vec(a, 6, name))
    if a.shape != (6, 6):
        raise ConfigError(f"{name}: expected scalar, 6 diagonal values or a 6x6 matrix")
    return a


def _inertia3(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape == (3,):
        return np.diag(a)
    if a.shape == (6,):  # Ixx, Iyy, Izz, Ixy, Ixz, Iyz
        return inertia_from_vech(a)
    if a.shape == (3, 3):
        return a
    raise ConfigError(f"{name}: inertia must have 3, 6 or 3x3 entries")


@dataclass
class ForcePulse:
    """Externally imposed measured wrench, active on ``[t_on, t_off)``."""

    wrench: np.ndarray
    t_on: float = 0.0
    t_off: float = math.inf


@dataclass
class SweepOptions:
    m_d: List[float] = field(default_factory=lambda: [float(m) for m in range(1, 11)])
    K_e_min: float = 500.0
    K_e_max: float = 64000.0
    grid_points: int = 16
    bisection_rounds: int = 4
    max_bounces: int = 2
    channel: int = 2


@dataclass
class ExperimentConfig:
    spec: ImpedanceSpec
    dt: float = 1e-3
    duration: float = 5.0
    seed: int = 0
    output_dir: str = "out"
    plant: str = "chain"
    ideal_feedback: float = 0.0  # velocity feedback of the ideal plant, 1/s
    model: Optional[ChainModel] = None
    q0: Optional[np.ndarray] = None
    qdot0: Optional[np.ndarray] = None
    pose0: Optional[np.ndarray] = None
    plan: Optional[TrajectoryPlan] = None
    setpoint: Optional[np.ndarray] = None
    wall: Optional[VirtualWall] = None
    wall_physical: bool = True
    desired_contact_wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    pulses: List[ForcePulse] = field(default_factory=list)
    gains: Optional[ControlGains] = None
    gamma: float = 10.0
    L0_scale: float = 0.5
    L0_model_factor: Optional[float] = None  # start from this multiple of the true parameters
    tip_force: str = "desired"
    psi_init: str = "zero"
    force_filter_hz: float = 0.0
    force_delay_steps: int = 0
    force_noise_std: float = 0.0
    torque_limit: Optional[np.ndarray] = None
    gamma0: float = 0.1
    upsilon_transient: float = 0.5
    sweep: SweepOptions = field(default_factory=SweepOptions)
    source: Optional[Path] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.plant not in PLANTS:
            raise ConfigError(f"plant must be one of {PLANTS}")
        if self.tip_force not in TIP_FORCE_MODES:
            raise ConfigError(f"tip_force must be one of {TIP_FORCE_MODES}")
        if self.psi_init not in PSI_INIT_MODES:
            raise ConfigError(f"psi_init must be one of {PSI_INIT_MODES}")
        if self.ideal_feedback < 0:
            raise ConfigError("ideal_feedback must be non-negative")
        if self.plant == "chain":
            if self.model is None:
                raise ConfigError("chain plant needs a [chain] section or chain_file")
            n = self.model.n
            self.q0 = np.zeros(n) if self.q0 is None else _vec(self.q0, n, "initial.q")
            self.qdot0 = np.zeros(n) if self.qdot0 is None else _vec(self.qdot0, n, "initial.qdot")
            if self.gains is None:
                self.gains = ControlGains.uniform(n)
            if self.gains.K_A.shape[0] not in (1, n):
                raise ConfigError("one feedback gain per body expected")
            if self.pose0 is None:
                self.pose0 = forward_kinematics(self.model, ChainState(self.q0, self.qdot0)).pose
        elif self.pose0 is None:
            self.pose0 = np.zeros(6)
        if self.setpoint is not None and self.plan is not None:
            raise ConfigError("give either a setpoint or a trajectory, not both")
        if self.plan is not None and self.duration < self.plan.horizon - 1e-12:
            raise ConfigError("duration is shorter than the trajectory horizon")
        if self.L0_model_factor is not None and not self.L0_model_factor > 0:
            raise ConfigError("L_hat0_model_factor must be positive")
        if not self.L0_scale > 0:
            raise ConfigError("L_hat0 must be positive")
        if self.force_delay_steps < 0:
            raise ConfigError("force delay must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def _body(d: Dict[str, Any], name: str) -> InertialParams:
    try:
        mass = float(d["mass"])
    except KeyError as exc:
        raise ConfigError(f"joint {name}: body mass missing") from exc
    if "inertia_com" in d:
        return InertialParams.from_com(mass, _vec(d.get("com", 0.0), 3, f"{name}.com"),
                                       _inertia3(d["inertia_com"], f"{name}.inertia_com"))
    if "inertia" in d:
        return InertialParams(mass, _vec(d.get("first_moment", 0.0), 3, f"{name}.first_moment"),
                              _inertia3(d["inertia"], f"{name}.inertia"))
    raise ConfigError(f"joint {name}: give inertia_com (+com) or inertia (+first_moment)")


def parse_chain(d: Dict[str, Any]) -> ChainModel:
    joints: List[JointDesc] = []
    bodies: List[InertialParams] = []
    entries = d.get("joints", [])
    if not entries:
        raise ConfigError("chain has no joints")
    for k, j in enumerate(entries):
        name = str(j.get("name", f"joint{k + 1}"))
        try:
            joints.append(JointDesc(
                name=name,
                kind=j.get("kind", "revolute"),
                axis=_vec(j.get("axis", [0, 0, 1]), 3, f"{name}.axis"),
                origin_rotation=rotation_xyz(_vec(j.get("origin_euler_xyz", 0.0), 3, f"{name}.origin_euler_xyz")),
                origin_offset=_vec(j.get("origin_offset", 0.0), 3, f"{name}.origin_offset"),
                lower=float(j.get("lower", -math.inf)),
                upper=float(j.get("upper", math.inf)),
                friction=float(j.get("friction", 0.0)),
            ))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        bodies.append(_body(j.get("body", {}), name))
    for b, jd in zip(bodies, joints):
        if not b.is_consistent():
            raise ConfigError(f"body of {jd.name} is not physically consistent")
    return ChainModel(
        joints, bodies,
        gravity=_vec(d.get("gravity", [0, 0, -9.81]), 3, "chain.gravity"),
        tool_rotation=rotation_xyz(_vec(d.get("tool_euler_xyz", 0.0), 3, "chain.tool_euler_xyz")),
        tool_offset=_vec(d.get("tool_offset", 0.0), 3, "chain.tool_offset"),
    )


def _spec(d: Dict[str, Any]) -> ImpedanceSpec:
    base = ImpedanceSpec.default()
    vals = {k: _mat6(d[k], f"impedance.{k}") if k in d else getattr(base, k)
            for k in ("M_d", "D_d", "K_d", "Lambda", "theta_psi", "theta_e")}
    try:
        return ImpedanceSpec(**vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _plan(entries: List[Dict[str, Any]], pose0: np.ndarray) -> TrajectoryPlan:
    segs = []
    t = 0.0
    start = pose0
    for k, e in enumerate(entries):
        t += float(e.get("pause", 0.0))
        target = start.copy()
        if "target" in e:
            target = _vec(e["target"], 6, f"trajectory[{k}].target")
        if "delta" in e:
            target = start + _vec(e["delta"], 6, f"trajectory[{k}].delta")
        try:
            segs.append(QuinticTrajectory(start, target, float(e["t_f"]), t))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"trajectory[{k}]: {exc}") from exc
        t += float(e["t_f"])
        start = target
    return TrajectoryPlan(tuple(segs))


def config_from_dict(raw: Dict[str, Any], base_dir: Path = Path(".")) -> ExperimentConfig:
    run = raw.get("run", {})
    ctrl = raw.get("control", {})
    model = None
    if "chain_file" in raw:
        path = base_dir / raw["chain_file"]
        try:
            model = parse_chain(tomli.loads(path.read_text())["chain"])
        except (OSError, KeyError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot load chain file {path}: {exc}") from exc
    elif "chain" in raw:
        model = parse_chain(raw["chain"])

    init = raw.get("initial", {})
    kwargs: Dict[str, Any] = dict(
        spec=_spec(raw.get("impedance", {})),
        dt=float(run.get("dt", 1e-3)),
        duration=float(run.get("duration", 5.0)),
        seed=int(run.get("seed", 0)),
        output_dir=str(run.get("output_dir", "out")),
        plant=run.get("plant", "chain"),
        ideal_feedback=float(run.get("ideal_feedback", 0.0)),
        model=model,
        q0=init.get("q"),
        qdot0=init.get("qdot"),
        pose0=None if "pose" not in init else _vec(init["pose"], 6, "initial.pose"),
        setpoint=None if "setpoint" not in raw else _vec(raw["setpoint"].get("pose"), 6, "setpoint.pose"),
        tip_force=run.get("tip_force", "desired"),
        psi_init=run.get("psi_init", "zero"),
        gamma=float(ctrl.get("gamma", 10.0)),
        L0_scale=float(ctrl.get("L_hat0", 0.5)),
        L0_model_factor=None if "L_hat0_model_factor" not in ctrl else float(ctrl["L_hat0_model_factor"]),
        force_filter_hz=float(ctrl.get("force_filter_hz", 0.0)),
        force_delay_steps=int(ctrl.get("force_delay_steps", 0)),
        force_noise_std=float(ctrl.get("force_noise_std", 0.0)),
        gamma0=float(raw.get("monitor", {}).get("gamma0", 0.1)),
        upsilon_transient=float(raw.get("monitor", {}).get("transient", 0.5)),
    )
    if model is not None and "K_A" in ctrl:
        K = np.asarray(ctrl["K_A"], dtype=float)
        try:
            if K.ndim == 2:  # one row of six diagonal entries per body
                if K.shape != (model.n, 6):
                    raise ConfigError(f"control.K_A: expected {model.n} rows of 6 values")
                kwargs["gains"] = ControlGains(np.stack([np.diag(row) for row in K]))
            else:
                kwargs["gains"] = ControlGains.uniform(model.n, _vec(K, 6, "control.K_A"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if "torque_limit" in ctrl and model is not None:
        kwargs["torque_limit"] = _vec(ctrl["torque_limit"], model.n, "control.torque_limit")
    if "wall" in raw:
        w = raw["wall"]
        try:
            kwargs["wall"] = VirtualWall(float(w["K_e"]), float(w["z_e"]), int(w.get("axis", 2)),
                                         int(w.get("side", 1)), bool(w.get("bilateral", False)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"wall: {exc}") from exc
        kwargs["wall_physical"] = bool(w.get("physical", True))
        kwargs["desired_contact_wrench"] = _vec(w.get("desired_force", 0.0), 6, "wall.desired_force")
    for k, p in enumerate(raw.get("force_pulse", [])):
        kwargs["pulses"] = kwargs.get("pulses", []) + [ForcePulse(
            _vec(p["wrench"], 6, f"force_pulse[{k}].wrench"),
            float(p.get("t_on", 0.0)), float(p.get("t_off", math.inf)))]
    if "zwidth" in raw:
        z = raw["zwidth"]
        defaults = SweepOptions()
        kwargs["sweep"] = SweepOptions(
            m_d=[float(m) for m in z.get("m_d", defaults.m_d)],
            K_e_min=float(z.get("K_e_min", defaults.K_e_min)),
            K_e_max=float(z.get("K_e_max", defaults.K_e_max)),
            grid_points=int(z.get("grid_points", defaults.grid_points)),
            bisection_rounds=int(z.get("bisection_rounds", defaults.bisection_rounds)),
            max_bounces=int(z.get("max_bounces", defaults.max_bounces)),
            channel=int(z.get("channel", defaults.channel)),
        )
    cfg = ExperimentConfig(**kwargs)
    if raw.get("trajectory"):
        if cfg.setpoint is not None:
            raise ConfigError("give either a setpoint or a trajectory, not both")
        cfg.plan = _plan(raw["trajectory"], cfg.pose0)
        if cfg.duration < cfg.plan.horizon - 1e-12:
            raise ConfigError("duration is shorter than the trajectory horizon")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        cfg = config_from_dict(raw, path.parent)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg.source = path
    return cfg
