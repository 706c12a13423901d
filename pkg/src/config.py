"""
File: src/config.py
Task: Workbench configuration. A tree of frozen dataclasses (one section per
module) loaded from YAML, overridable from `--set a.b=value` flags and from
the environment (`.env` via python-dotenv), validated with every violation
reported at once, and hashed per section so stage outputs are keyed only by
what they depend on.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .sim.actuator import ActuatorLimits, PdGains, PlantConfig, TransmissionModel
from .sim.dynamics import ArmModel

load_dotenv()

CODE_VERSION = "0.3.0"


# -------------------------
# Environment
# -------------------------

def get_out_dir_override() -> Optional[str]:
    val = os.getenv("UAN_WORKBENCH_OUT_DIR", "").strip()
    return val or None


def get_thread_override() -> Optional[int]:
    raw = os.getenv("UAN_WORKBENCH_THREADS", "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            "UAN_WORKBENCH_THREADS must be an integer.",
            payload={"errors": [f"UAN_WORKBENCH_THREADS={raw!r} is not an integer"]},
        )


def get_log_level() -> str:
    return os.getenv("UAN_WORKBENCH_LOG_LEVEL", "INFO")


# -------------------------
# Sections
# -------------------------

@dataclass(frozen=True)
class ArmSection:
    link_length: Tuple[float, ...] = (0.45, 0.35)
    link_mass: Tuple[float, ...] = (3.0, 1.5)
    # None: mid-link COM and rod inertia m l^2 / 12
    link_com_offset: Optional[Tuple[float, ...]] = None
    link_inertia: Optional[Tuple[float, ...]] = None
    gravity: float = 9.81
    base_height: float = 0.6


@dataclass(frozen=True)
class GainsSection:
    kp: Any = 60.0
    kd: Any = 2.0


@dataclass(frozen=True)
class LimitsSection:
    tau_max: Any = 30.0
    qdot_max: Any = 6.0
    p_max: float = 300.0
    # |q| beyond this (rad), or any non-finite value, marks a diverged env
    divergence_limit: float = 1.0e3


@dataclass(frozen=True)
class TransmissionSection:
    lag_tau: Any = 0.015
    tau_coulomb: Any = 1.2
    tau_stiction: Any = 2.5
    stribeck_vel: Any = 0.3
    visc: Any = 0.35
    efficiency: Any = 0.85
    armature_extra: Any = 0.08
    encoder_offset: Any = 0.0


@dataclass(frozen=True)
class DatagenSection:
    amplitudes: Tuple[float, ...] = (1.25, 2.5, 5.0, 10.0)
    frequencies: Tuple[float, ...] = (0.25, 0.5, 1.0)
    segment_duration: float = 2.1
    noise_duration: float = 300.0
    hold_min: float = 0.005
    hold_max: float = 0.4
    # None: tau_max / 3
    noise_std: Optional[float] = None
    throw_duration: float = 5.0
    throw_speed_fraction: float = 0.8


@dataclass(frozen=True)
class NnSection:
    uan_hidden: Tuple[int, ...] = (128, 128)
    policy_hidden: Tuple[int, ...] = (256, 256, 256)
    value_hidden: Tuple[int, ...] = (256, 256, 256)
    policy_init_log_std: float = 0.0


@dataclass(frozen=True)
class UanSection:
    history: int = 20
    episode_s: float = 20.0
    # None: 0.5 * tau_max
    delta_tau_max: Optional[float] = None
    dq_scale: float = 0.5
    init_log_std: float = math.log(0.1)
    teacher_forcing: bool = False
    max_error: float = 0.5
    # weight of the action-smoothness reward term
    smooth_scale: float = 0.5


@dataclass(frozen=True)
class PpoSection:
    gamma: float = 0.995
    lam: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.0
    actor_lr: float = 1.0e-3
    critic_lr: float = 5.0e-4
    kl_threshold: float = 0.01
    horizon: int = 96
    n_envs: int = 256
    actor_minibatches: int = 4
    mini_epochs: int = 5
    max_grad_norm: float = 1.0
    weight_decay: float = 0.01
    updates: int = 300
    log_every: int = 10


@dataclass(frozen=True)
class CemSection:
    population: int = 64
    elite_frac: float = 0.25
    iterations: int = 50
    n_windows: int = 16
    window_s: float = 4.0
    coulomb_bounds: Tuple[float, float] = (0.0, 5.0)
    visc_bounds: Tuple[float, float] = (0.0, 2.0)
    armature_bounds: Tuple[float, float] = (0.0, 0.3)
    min_std_frac: float = 0.01


@dataclass(frozen=True)
class ActnetSection:
    hidden: Tuple[int, ...] = (128, 128)
    epochs: int = 60
    batch_size: int = 512
    lr: float = 1.0e-3
    weight_decay: float = 0.01
    test_frac: float = 0.1


@dataclass(frozen=True)
class DrSection:
    kp_scale: Tuple[float, float] = (0.9, 1.1)
    kd_scale: Tuple[float, float] = (0.5, 1.5)
    stall_scale: Tuple[float, float] = (0.9, 1.1)
    encoder_offset: Tuple[float, float] = (-0.05, 0.05)
    lag_steps: Tuple[int, int] = (0, 6)
    eval_instances: int = 4


@dataclass(frozen=True)
class TaskSection:
    policy_dt: float = 0.02
    obs_history: int = 10
    action_scale: float = 1.0
    episode_s: float = 5.0
    setup_s: float = 2.5
    throw_s: float = 1.0
    ball_attach_s: float = 1.5
    retain_throw_p: float = 0.3
    settle_on_reset_p: float = 0.2
    rest_pose: Tuple[float, ...] = (-0.9, 0.9)
    cocked_pose: Tuple[float, ...] = (-2.6, 1.3)
    release_pose: Tuple[float, ...] = (-0.6, 0.4)
    swing_s: float = 0.4
    joint_limits: Tuple[float, float] = (-3.0, 3.0)
    pretrain_episode_s: float = 14.0
    command_resample_s: float = 7.0
    command_interp_s: Tuple[float, float] = (2.0, 5.0)
    collapse_frac: float = 0.5
    collapse_window: int = 50
    command_head_scale: float = 0.3


@dataclass(frozen=True)
class EvalSection:
    window_s: float = 20.0
    overlap: float = 0.5
    n_episodes: int = 100
    calib_seeds: Tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class WorkbenchConfig:
    arm: ArmSection = field(default_factory=ArmSection)
    gains: GainsSection = field(default_factory=GainsSection)
    limits: LimitsSection = field(default_factory=LimitsSection)
    transmission: TransmissionSection = field(default_factory=TransmissionSection)
    sim_armature: Any = 0.02
    timestep: float = 0.005
    datagen: DatagenSection = field(default_factory=DatagenSection)
    nn: NnSection = field(default_factory=NnSection)
    uan: UanSection = field(default_factory=UanSection)
    ppo_uan: PpoSection = field(default_factory=PpoSection)
    ppo_pretrain: PpoSection = field(default_factory=lambda: PpoSection(
        gamma=0.99, horizon=24, entropy_coef=0.01, updates=1000,
    ))
    ppo_finetune: PpoSection = field(default_factory=lambda: PpoSection(
        gamma=0.99, horizon=24, entropy_coef=0.0, actor_lr=1.0e-5, updates=500,
    ))
    cem: CemSection = field(default_factory=CemSection)
    actnet: ActnetSection = field(default_factory=ActnetSection)
    dr: DrSection = field(default_factory=DrSection)
    task: TaskSection = field(default_factory=TaskSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out_dir: str = "runs"
    threads: int = 1
    n_shards: int = 8
    log_level: str = "INFO"

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @property
    def n_joints(self) -> int:
        return len(self.arm.link_length)

    @property
    def tau_max(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.limits.tau_max, dtype=np.float64), (self.n_joints,))

    @property
    def qdot_max(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.limits.qdot_max, dtype=np.float64), (self.n_joints,))

    @property
    def delta_tau_max(self) -> np.ndarray:
        if self.uan.delta_tau_max is not None:
            return np.full(self.n_joints, float(self.uan.delta_tau_max))
        return 0.5 * self.tau_max


# -------------------------
# Loading / overrides
# -------------------------

def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _coerce(value: Any, default: Any) -> Any:
    # yaml lists become tuples wherever the default is a tuple
    if isinstance(value, list):
        return tuple(_coerce(v, None) for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(defaults: Any, data: Dict[str, Any], path: str, errors: List[str]):
    if not isinstance(data, dict):
        errors.append(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        return defaults
    known = [f.name for f in fields(defaults)]
    for key in data:
        if key not in known:
            errors.append(f"{path}{key}: unknown key")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(current, data[name], f"{path}{name}.", errors)
        else:
            kwargs[name] = _coerce(data[name], current)
    return replace(defaults, **kwargs)


def config_from_dict(data: Dict[str, Any]) -> WorkbenchConfig:
    errors: List[str] = []
    cfg = _build(WorkbenchConfig(), data or {}, "", errors)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(f"Invalid workbench config ({len(errors)} problem(s)).", payload={"errors": errors})
    return cfg


def parse_override(item: str) -> Tuple[List[str], Any]:
    if "=" not in item:
        raise ConfigError("Override must look like key=value.", payload={"errors": [f"bad override {item!r}"]})
    key, raw = item.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    out = json.loads(json.dumps(data))
    for item in overrides or []:
        keys, value = parse_override(item)
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError("Override descends into a scalar.", payload={"errors": [f"{item!r}"]})
        node[keys[-1]] = value
    return out


def load_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    *,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
) -> WorkbenchConfig:
    """
    Resolve the config: file < environment < CLI (`--set`, `--seed`, `--out`, `--threads`).
    """
    data: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError("Config file not found.", payload={"errors": [f"missing file {path}"], "path": path})
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as e:
                raise ConfigError("Config file is not valid YAML.", payload={"errors": [repr(e)], "path": path})

    env_out, env_threads = get_out_dir_override(), get_thread_override()
    if env_out is not None:
        data["out_dir"] = env_out
    if env_threads is not None:
        data["threads"] = env_threads

    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = int(seed)
    if out_dir is not None:
        data["out_dir"] = out_dir
    if threads is not None:
        data["threads"] = int(threads)
    return config_from_dict(data)


def dump_config(cfg: WorkbenchConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


# -------------------------
# Validation
# -------------------------

def _per_joint(value: Any, n: int, name: str, errors: List[str], *, positive=False, nonneg=False) -> None:
    arr = np.asarray(value, dtype=np.float64) if not isinstance(value, (str, dict)) else None
    if arr is None or arr.ndim > 1 or (arr.ndim == 1 and arr.shape[0] != n):
        errors.append(f"{name}: expected a scalar or {n} per-joint values")
        return
    if not np.all(np.isfinite(arr)):
        errors.append(f"{name}: must be finite")
    elif positive and np.any(arr <= 0):
        errors.append(f"{name}: must be > 0")
    elif nonneg and np.any(arr < 0):
        errors.append(f"{name}: must be >= 0")


def _range(pair: Any, name: str, errors: List[str]) -> None:
    if not isinstance(pair, tuple) or len(pair) != 2:
        errors.append(f"{name}: expected [min, max]")
    elif pair[0] > pair[1]:
        errors.append(f"{name}: min {pair[0]} > max {pair[1]}")


def _check_ppo(p: PpoSection, name: str, errors: List[str]) -> None:
    if not 0 < p.gamma <= 1:
        errors.append(f"{name}.gamma: must be in (0, 1]")
    if not 0 <= p.lam <= 1:
        errors.append(f"{name}.lam: must be in [0, 1]")
    if p.clip <= 0:
        errors.append(f"{name}.clip: must be > 0")
    if p.horizon < 1 or p.n_envs < 1 or p.mini_epochs < 1 or p.updates < 0:
        errors.append(f"{name}: horizon, n_envs and mini_epochs must be >= 1, updates >= 0")
    if p.actor_minibatches < 1 or p.actor_minibatches > p.horizon * p.n_envs:
        errors.append(f"{name}.actor_minibatches: must be in [1, horizon * n_envs]")
    if not (1e-6 <= p.actor_lr <= 1e-2):
        errors.append(f"{name}.actor_lr: must be in [1e-6, 1e-2]")
    if p.critic_lr <= 0 or p.kl_threshold <= 0 or p.max_grad_norm <= 0 or p.weight_decay < 0:
        errors.append(f"{name}: critic_lr, kl_threshold, max_grad_norm must be > 0 and weight_decay >= 0")


def validate(cfg: WorkbenchConfig) -> List[str]:
    errors: List[str] = []
    arm = cfg.arm
    n = len(arm.link_length)
    if n < 1:
        errors.append("arm.link_length: need at least one link")
    for name in ("link_mass", "link_com_offset", "link_inertia"):
        val = getattr(arm, name)
        if val is not None and len(val) != n:
            errors.append(f"arm.{name}: expected {n} values, got {len(val)}")
    if any(v <= 0 for v in arm.link_length) or any(v <= 0 for v in arm.link_mass):
        errors.append("arm: lengths and masses must be > 0")
    if arm.link_com_offset is not None and len(arm.link_com_offset) == n:
        if any(c <= 0 or c > l for c, l in zip(arm.link_com_offset, arm.link_length)):
            errors.append("arm.link_com_offset: each must lie in (0, link_length]")
    if arm.link_inertia is not None and any(v <= 0 for v in arm.link_inertia):
        errors.append("arm.link_inertia: must be > 0")

    _per_joint(cfg.gains.kp, n, "gains.kp", errors, positive=True)
    _per_joint(cfg.gains.kd, n, "gains.kd", errors, nonneg=True)
    _per_joint(cfg.limits.tau_max, n, "limits.tau_max", errors, positive=True)
    _per_joint(cfg.limits.qdot_max, n, "limits.qdot_max", errors, positive=True)
    if not cfg.limits.p_max > 0:
        errors.append("limits.p_max: must be > 0")
    if not cfg.limits.divergence_limit > 0:
        errors.append("limits.divergence_limit: must be > 0")
    if cfg.uan.smooth_scale < 0:
        errors.append("uan.smooth_scale: must be >= 0")
    _per_joint(cfg.sim_armature, n, "sim_armature", errors, nonneg=True)

    tm = cfg.transmission
    for name in ("lag_tau", "tau_coulomb", "tau_stiction", "visc", "armature_extra"):
        _per_joint(getattr(tm, name), n, f"transmission.{name}", errors, nonneg=True)
    _per_joint(tm.stribeck_vel, n, "transmission.stribeck_vel", errors, positive=True)
    _per_joint(tm.encoder_offset, n, "transmission.encoder_offset", errors)
    try:
        eff = np.asarray(tm.efficiency, dtype=np.float64)
        if np.any(eff <= 0) or np.any(eff > 1):
            errors.append("transmission.efficiency: must lie in (0, 1]")
        if np.any(np.asarray(tm.tau_stiction, dtype=np.float64) < np.asarray(tm.tau_coulomb, dtype=np.float64)):
            errors.append("transmission: tau_stiction must be >= tau_coulomb")
    except (TypeError, ValueError):
        errors.append("transmission: efficiency/stiction/coulomb must be numeric")

    if not cfg.timestep > 0:
        errors.append("timestep: must be > 0")

    dg = cfg.datagen
    if not 0 < dg.hold_min <= dg.hold_max:
        errors.append("datagen: need 0 < hold_min <= hold_max")
    if dg.segment_duration <= 0 or dg.noise_duration <= 0 or dg.throw_duration <= 0:
        errors.append("datagen: durations must be > 0")
    if dg.noise_std is not None and dg.noise_std <= 0:
        errors.append("datagen.noise_std: must be > 0")

    if cfg.uan.history < 1 or cfg.uan.episode_s <= 0 or cfg.uan.max_error <= 0:
        errors.append("uan: history >= 1, episode_s > 0, max_error > 0 required")
    if cfg.uan.delta_tau_max is not None and cfg.uan.delta_tau_max <= 0:
        errors.append("uan.delta_tau_max: must be > 0")

    for name in ("ppo_uan", "ppo_pretrain", "ppo_finetune"):
        _check_ppo(getattr(cfg, name), name, errors)

    cem = cfg.cem
    if not 0 < cem.elite_frac < 1:
        errors.append("cem.elite_frac: must be in (0, 1)")
    if cem.population < 8:
        errors.append("cem.population: must be >= 8")
    if cem.iterations < 1 or cem.n_windows < 1 or cem.window_s <= 0:
        errors.append("cem: iterations, n_windows >= 1 and window_s > 0 required")
    for name in ("coulomb_bounds", "visc_bounds", "armature_bounds"):
        _range(getattr(cem, name), f"cem.{name}", errors)

    for name in ("kp_scale", "kd_scale", "stall_scale", "encoder_offset", "lag_steps"):
        _range(getattr(cfg.dr, name), f"dr.{name}", errors)
    if cfg.dr.lag_steps[0] < 0:
        errors.append("dr.lag_steps: must be >= 0")

    t = cfg.task
    if n < 2:
        errors.append("task: the throw task needs at least 2 joints")
    for name in ("rest_pose", "cocked_pose", "release_pose"):
        if len(getattr(t, name)) != n:
            errors.append(f"task.{name}: expected {n} values")
    ratio = t.policy_dt / cfg.timestep if cfg.timestep > 0 else 0.0
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        errors.append("task.policy_dt: must be an integer multiple of timestep")
    if not t.setup_s > t.ball_attach_s >= 0:
        errors.append("task: need setup_s > ball_attach_s >= 0")
    for name in ("retain_throw_p", "settle_on_reset_p"):
        if not 0 <= getattr(t, name) < 1:
            errors.append(f"task.{name}: must be in [0, 1)")
    _range(t.command_interp_s, "task.command_interp_s", errors)

    e = cfg.eval
    if e.window_s <= 0 or not 0 <= e.overlap < 1 or e.n_episodes < 1:
        errors.append("eval: window_s > 0, overlap in [0, 1), n_episodes >= 1 required")
    if len(e.calib_seeds) < 1:
        errors.append("eval.calib_seeds: need at least one seed")

    if cfg.threads < 1 or cfg.n_shards < 1:
        errors.append("threads and n_shards must be >= 1")
    return errors


# -------------------------
# Hashing
# -------------------------

STAGE_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "plant": ("arm", "gains", "limits", "transmission", "sim_armature", "timestep"),
    "collect": ("arm", "gains", "limits", "transmission", "sim_armature", "timestep", "datagen", "task"),
    "train-uan": ("arm", "gains", "limits", "transmission", "sim_armature", "timestep", "datagen", "task", "nn", "uan", "ppo_uan", "n_shards"),
    "fit-cem": ("arm", "gains", "limits", "transmission", "sim_armature", "timestep", "datagen", "task", "cem"),
    "train-actnet": ("arm", "gains", "limits", "transmission", "sim_armature", "timestep", "datagen", "task", "nn", "uan", "actnet"),
    "pretrain": ("arm", "gains", "limits", "sim_armature", "timestep", "nn", "ppo_pretrain", "task", "n_shards"),
    "finetune": (
        "arm", "gains", "limits", "transmission", "sim_armature", "timestep", "datagen", "nn", "uan", "ppo_uan",
        "cem", "actnet", "dr", "ppo_pretrain", "ppo_finetune", "task", "n_shards",
    ),
}


def config_hash(cfg: WorkbenchConfig, sections: Optional[Sequence[str]] = None) -> str:
    data = cfg.to_dict()
    if sections is not None:
        data = {k: data[k] for k in sections}
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -------------------------
# Builders
# -------------------------

def build_arm(cfg: WorkbenchConfig) -> ArmModel:
    a = cfg.arm
    lengths = np.asarray(a.link_length, dtype=np.float64)
    masses = np.asarray(a.link_mass, dtype=np.float64)
    com = np.asarray(a.link_com_offset, dtype=np.float64) if a.link_com_offset is not None else lengths / 2.0
    inertia = np.asarray(a.link_inertia, dtype=np.float64) if a.link_inertia is not None else masses * lengths**2 / 12.0
    return ArmModel(lengths, masses, com, inertia, gravity=a.gravity, base_height=a.base_height)


def build_plant_config(cfg: WorkbenchConfig, *, reference: bool, control_mode: str = "torque") -> PlantConfig:
    n = cfg.n_joints
    per_joint = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy()
    tm = None
    if reference:
        tm = TransmissionModel(**{f.name: per_joint(getattr(cfg.transmission, f.name)) for f in fields(TransmissionSection)})
    return PlantConfig(
        arm=build_arm(cfg),
        gains=PdGains(per_joint(cfg.gains.kp), per_joint(cfg.gains.kd)),
        limits=ActuatorLimits(per_joint(cfg.limits.tau_max), per_joint(cfg.limits.qdot_max), float(cfg.limits.p_max)),
        sim_armature=per_joint(cfg.sim_armature),
        transmission=tm,
        control_mode=control_mode,
        divergence_limit=float(cfg.limits.divergence_limit),
    )
