"""
File: src/sim/actuator.py
Task: Actuation layer shared by both plants. The idealized simulator applies
PD + torque-speed + power clipping; the reference plant additionally runs the
transmission (first-order lag, Stribeck friction with stiction, efficiency
asymmetry, extra armature, encoder offset) that opens the sim-to-real gap.

Every parameter field accepts a scalar, a per-joint vector or a per-env x
per-joint array: batched callers (domain randomization, CEM populations)
broadcast against state arrays of shape (..., n_joints).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .dynamics import DIVERGENCE_LIMIT, ArmModel, JointState, advance, bias_forces

STICTION_VEL_EPS = 1.0e-3


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _jsonable(x):
    a = np.asarray(x)
    return a.tolist() if a.ndim else float(a)


# --------- Domain types ---------

@dataclass
class PdGains:
    kp: Any = 60.0
    kd: Any = 2.0

    def __post_init__(self):
        self.kp, self.kd = _arr(self.kp), _arr(self.kd)
        if np.any(self.kp <= 0) or np.any(self.kd < 0):
            raise ValueError("PdGains requires kp > 0 and kd >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return {"kp": _jsonable(self.kp), "kd": _jsonable(self.kd)}


@dataclass
class ActuatorLimits:
    tau_max: Any = 30.0
    qdot_max: Any = 6.0
    p_max: Any = 300.0

    def __post_init__(self):
        self.tau_max, self.qdot_max, self.p_max = _arr(self.tau_max), _arr(self.qdot_max), _arr(self.p_max)
        if np.any(self.tau_max <= 0) or np.any(self.qdot_max <= 0) or np.any(self.p_max <= 0):
            raise ValueError("ActuatorLimits entries must be strictly positive")

    def to_dict(self) -> Dict[str, Any]:
        return {"tau_max": _jsonable(self.tau_max), "qdot_max": _jsonable(self.qdot_max), "p_max": _jsonable(self.p_max)}


@dataclass
class TransmissionModel:
    lag_tau: Any = 0.015
    tau_coulomb: Any = 1.2
    tau_stiction: Any = 2.5
    stribeck_vel: Any = 0.3
    visc: Any = 0.35
    efficiency: Any = 0.85
    armature_extra: Any = 0.08
    encoder_offset: Any = 0.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            setattr(self, name, _arr(getattr(self, name)))
        problems = []
        if np.any(self.lag_tau < 0):
            problems.append("lag_tau must be >= 0")
        if np.any(self.efficiency <= 0) or np.any(self.efficiency > 1):
            problems.append("efficiency must lie in (0, 1]")
        if np.any(self.tau_coulomb < 0) or np.any(self.tau_stiction < self.tau_coulomb):
            problems.append("need tau_stiction >= tau_coulomb >= 0")
        if np.any(self.stribeck_vel <= 0):
            problems.append("stribeck_vel must be > 0")
        if np.any(self.visc < 0) or np.any(self.armature_extra < 0):
            problems.append("visc and armature_extra must be >= 0")
        if problems:
            raise ValueError("invalid TransmissionModel: " + "; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        return {name: _jsonable(getattr(self, name)) for name in self.__dataclass_fields__}


def degenerate_transmission() -> TransmissionModel:
    """A transmission with every effect switched off; behaves like the ideal sim."""
    return TransmissionModel(
        lag_tau=0.0, tau_coulomb=0.0, tau_stiction=0.0, stribeck_vel=1.0,
        visc=0.0, efficiency=1.0, armature_extra=0.0, encoder_offset=0.0,
    )


@dataclass
class PlantConfig:
    arm: ArmModel
    gains: PdGains = field(default_factory=PdGains)
    limits: ActuatorLimits = field(default_factory=ActuatorLimits)
    sim_armature: Any = 0.02
    transmission: Optional[TransmissionModel] = None
    control_mode: str = "torque"
    divergence_limit: float = DIVERGENCE_LIMIT

    def __post_init__(self):
        self.sim_armature = _arr(self.sim_armature)
        if self.control_mode not in ("torque", "position"):
            raise ValueError(f"control_mode must be 'torque' or 'position', got {self.control_mode!r}")

    @property
    def is_reference(self) -> bool:
        return self.transmission is not None

    def as_ideal(self) -> "PlantConfig":
        return replace(self, transmission=None)

    def with_mode(self, control_mode: str) -> "PlantConfig":
        return replace(self, control_mode=control_mode)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arm": self.arm.to_dict(),
            "gains": self.gains.to_dict(),
            "limits": self.limits.to_dict(),
            "sim_armature": _jsonable(self.sim_armature),
            "transmission": self.transmission.to_dict() if self.transmission is not None else None,
            "control_mode": self.control_mode,
            "divergence_limit": self.divergence_limit,
        }


@dataclass
class ActuatorState:
    lagged_torque: np.ndarray
    # post-lag, post-clip torque before transmission losses (the "motor current" estimate)
    motor_torque: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "ActuatorState":
        return cls(np.zeros(shape), np.zeros(shape))

    def copy(self) -> "ActuatorState":
        return ActuatorState(self.lagged_torque.copy(), self.motor_torque.copy())


# --------- Operations ---------

def pd_torque(gains: PdGains, q_des: np.ndarray, state: JointState) -> np.ndarray:
    return gains.kp * (q_des - state.q) - gains.kd * state.qdot


def torque_speed_clip(tau: np.ndarray, qdot: np.ndarray, limits: ActuatorLimits) -> np.ndarray:
    """
    -tau_max (1 + max(min(qdot/qdot_max, 0), -1)) <= tau
        <= tau_max (1 - max(min(qdot/qdot_max, 1), 0))
    """
    ratio = qdot / limits.qdot_max
    lower = -limits.tau_max * (1.0 + np.maximum(np.minimum(ratio, 0.0), -1.0))
    upper = limits.tau_max * (1.0 - np.maximum(np.minimum(ratio, 1.0), 0.0))
    return np.minimum(np.maximum(tau, lower), upper)


def power_clip(tau: np.ndarray, qdot: np.ndarray, p_max) -> np.ndarray:
    """Scale every joint by one factor so that sum |tau_i| |qdot_i| <= p_max."""
    p = np.asarray(p_max, dtype=np.float64)
    if p.ndim:
        p = p[..., None]
    power = np.sum(np.abs(tau) * np.abs(qdot), axis=-1, keepdims=True)
    over = power > p
    scale = np.where(over, p / np.where(over, power, 1.0), 1.0)
    return tau * scale


def clip_command(tau: np.ndarray, qdot: np.ndarray, limits: ActuatorLimits) -> np.ndarray:
    return power_clip(torque_speed_clip(tau, qdot, limits), qdot, limits.p_max)


def friction_torque(tm: TransmissionModel, qdot: np.ndarray, net_drive: np.ndarray) -> np.ndarray:
    """
    Moving (|qdot| > eps): Stribeck curve plus viscous term.
    Stuck (|qdot| <= eps): opposes the net drive with magnitude min(|net|, tau_s).
    """
    stribeck = tm.tau_coulomb + (tm.tau_stiction - tm.tau_coulomb) * np.exp(-(qdot / tm.stribeck_vel) ** 2)
    moving = -(np.sign(qdot) * stribeck + tm.visc * qdot)
    stuck = -np.sign(net_drive) * np.minimum(np.abs(net_drive), tm.tau_stiction)
    return np.where(np.abs(qdot) > STICTION_VEL_EPS, moving, stuck)


def lag_filter(tm: TransmissionModel, lagged: np.ndarray, tau_cmd: np.ndarray, h: float) -> np.ndarray:
    return lag_update(tm.lag_tau, lagged, tau_cmd, h)


def lag_update(lag_tau, lagged: np.ndarray, tau_cmd: np.ndarray, h: float) -> np.ndarray:
    """First-order lag, alpha = min(h / lag, 1); a zero lag passes the command through."""
    lag = np.broadcast_to(lag_tau, np.broadcast(lagged, lag_tau).shape)
    alpha = np.minimum(h / np.where(lag > 0, lag, 1.0), 1.0)
    return np.where(lag > 0, lagged + alpha * (tau_cmd - lagged), tau_cmd)


def transmit(tm: TransmissionModel, tau_motor: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Efficiency asymmetry: eta * tau when driving, tau / eta when back-driven."""
    return np.where(tau_motor * qdot >= 0.0, tm.efficiency * tau_motor, tau_motor / tm.efficiency)


def observe(cfg: PlantConfig, state: JointState) -> JointState:
    """Encoder reading of a physical state (adds the encoder offset on reference plants)."""
    if cfg.transmission is None:
        return state
    return JointState(state.q + cfg.transmission.encoder_offset, state.qdot)


def step_reference(
    cfg: PlantConfig,
    state: JointState,
    act: ActuatorState,
    tau_cmd: np.ndarray,
    h: float,
) -> Tuple[JointState, ActuatorState]:
    """
    One step of the synthetic "real" plant. `state` is the physical state;
    use `observe` for what the encoders report.

    Joints at (near) zero velocity whose net drive stays under the breakaway
    torque are held: their generalized force is zero and their velocity is
    pinned to 0 for the step.
    """
    tm = cfg.transmission
    if tm is None:
        raise ValueError("step_reference requires a PlantConfig with a transmission")
    tau_cmd = _arr(tau_cmd)

    lagged = lag_filter(tm, act.lagged_torque, tau_cmd, h)
    tau_m = clip_command(lagged, state.qdot, cfg.limits)
    tau_out = transmit(tm, tau_m, state.qdot)

    c = bias_forces(cfg.arm, state)
    net = tau_out - c
    fric = friction_torque(tm, state.qdot, net)
    held = (np.abs(state.qdot) <= STICTION_VEL_EPS) & (np.abs(net) < tm.tau_stiction)
    rhs = np.where(held, 0.0, (tau_out + fric) - c)

    nxt = advance(cfg.arm, state, rhs, h, cfg.sim_armature + tm.armature_extra)
    if np.any(held):
        qdot_next = np.where(held, 0.0, nxt.qdot)
        nxt = JointState(state.q + h * qdot_next, qdot_next)
    return nxt, ActuatorState(lagged, tau_m)


def step_ideal(
    cfg: PlantConfig,
    state: JointState,
    tau_cmd: np.ndarray,
    h: float,
    extra_tau: Optional[np.ndarray] = None,
) -> JointState:
    """Clipped command plus the corrective torque (added after clipping)."""
    tau = clip_command(_arr(tau_cmd), state.qdot, cfg.limits)
    extra = np.zeros_like(tau) if extra_tau is None else _arr(extra_tau)
    c = bias_forces(cfg.arm, state)
    return advance(cfg.arm, state, (tau + extra) - c, h, cfg.sim_armature)


def step_applied(cfg: PlantConfig, state: JointState, tau_applied: np.ndarray, h: float) -> JointState:
    """Integrate with a torque that bypasses clipping (learned actuator models)."""
    c = bias_forces(cfg.arm, state)
    return advance(cfg.arm, state, _arr(tau_applied) - c, h, cfg.sim_armature)
