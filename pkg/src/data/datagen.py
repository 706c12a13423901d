"""
File: src/data/datagen.py
Task: Excitation signals, data collection on the reference plant and the
transition dataset. Sessions:
  - square / sine: one joint driven open-loop through the amplitude x frequency
    sweep while the others are PD-held at their start position;
  - gaussian: piecewise-constant clipped Gaussian torques on every joint;
  - throw: a scripted fast wind-up / swing / brake, kept out of training.
Every session starts from the arm hanging at rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..sim.actuator import PlantConfig, pd_torque
from ..sim.dynamics import JointState
from ..sim.plants import ReferencePlant

logger = logging.getLogger(__name__)

TRAIN_TAGS = ("square", "sine", "gaussian")
TEST_TAGS = ("throw",)
# MSE is reported per regime, each a group of session tags
REGIMES: Dict[str, Tuple[str, ...]] = {
    "square+sine": ("square", "sine"),
    "gaussian": ("gaussian",),
    "throw": ("throw",),
}


def rest_pose(n_joints: int) -> np.ndarray:
    """Arm hanging straight down: first link along -z, the rest aligned."""
    q = np.zeros(n_joints)
    q[0] = -np.pi / 2.0
    return q


# --------- Signals ---------

@dataclass(frozen=True)
class ExcitationSpec:
    kind: str
    duration: float
    amplitude: float = 0.0
    frequency: float = 0.0
    hold_range: Tuple[float, float] = (0.005, 0.4)
    noise_std: float = 0.0
    # None: all joints
    target_joint: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("square", "sine", "gaussian-noise"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("excitation duration must be > 0")
        if self.kind == "gaussian-noise" and not 0 < self.hold_range[0] <= self.hold_range[1]:
            raise ValueError("noise hold_range must satisfy 0 < min <= max")


def _times(spec: ExcitationSpec, h: float) -> np.ndarray:
    return np.arange(int(round(spec.duration / h))) * h


def gen_square(spec: ExcitationSpec, h: float = 0.005) -> np.ndarray:
    """amplitude * sgn(sin(2 pi f t)); sgn(0) counts as +."""
    if spec.kind != "square":
        raise ValueError("gen_square needs a square spec")
    s = np.sin(2.0 * np.pi * spec.frequency * _times(spec, h))
    return np.where(s >= 0.0, spec.amplitude, -spec.amplitude)


def gen_sine(spec: ExcitationSpec, h: float = 0.005) -> np.ndarray:
    if spec.kind != "sine":
        raise ValueError("gen_sine needs a sine spec")
    return spec.amplitude * np.sin(2.0 * np.pi * spec.frequency * _times(spec, h))


def gen_noise(
    spec: ExcitationSpec,
    seed: int,
    n_joints: int,
    tau_max: np.ndarray,
    h: float = 0.005,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Piecewise-constant clipped Gaussian torques on all joints.
    Returns (torques (T, n), hold durations in seconds).
    """
    if spec.kind != "gaussian-noise":
        raise ValueError("gen_noise needs a gaussian-noise spec")
    rng = np.random.default_rng(seed)
    n_steps = int(round(spec.duration / h))
    lo = max(1, int(round(spec.hold_range[0] / h)))
    hi = max(lo, int(round(spec.hold_range[1] / h)))
    out = np.empty((n_steps, n_joints))
    holds: List[int] = []
    k = 0
    while k < n_steps:
        hold = int(rng.integers(lo, hi + 1))
        value = np.clip(rng.normal(0.0, spec.noise_std, size=n_joints), -tau_max, tau_max)
        out[k:k + hold] = value
        holds.append(min(hold, n_steps - k))
        k += hold
    return out, np.asarray(holds) * h


# --------- Session plans ---------

@dataclass
class SessionPlan:
    tag: str
    n_steps: int
    # (step index, observed state, start pose) -> torque command
    controller: Callable[[int, JointState, np.ndarray], np.ndarray] = field(repr=False)
    start_pose: np.ndarray = field(default=None, repr=False)


def _targeted_plan(tag: str, joint: int, specs: Sequence[ExcitationSpec], plant: PlantConfig, h: float) -> SessionPlan:
    gen = gen_square if tag == "square" else gen_sine
    signal = np.concatenate([gen(s, h) for s in specs])
    start = rest_pose(plant.arm.n_joints)

    def controller(k: int, obs: JointState, pose: np.ndarray) -> np.ndarray:
        tau = pd_torque(plant.gains, pose, obs)
        tau[..., joint] = signal[k]
        return tau

    return SessionPlan(tag, signal.shape[0], controller, start)


def _noise_plan(torques: np.ndarray, plant: PlantConfig) -> SessionPlan:
    def controller(k: int, obs: JointState, pose: np.ndarray) -> np.ndarray:
        return torques[k].copy()

    return SessionPlan("gaussian", torques.shape[0], controller, rest_pose(plant.arm.n_joints))


def throw_swing_plan(
    plant: PlantConfig,
    cocked_pose: Sequence[float],
    release_pose: Sequence[float],
    duration: float,
    speed_fraction: float,
    h: float,
) -> SessionPlan:
    """
    Scripted bang-bang throw: PD wind-up to the cocked pose (0-1.5 s), full
    torque toward the release pose until a joint reaches `speed_fraction` of
    its no-load speed (at most 1 s), then a PD brake back to rest.
    """
    n = plant.arm.n_joints
    start = rest_pose(n)
    cocked = np.asarray(cocked_pose, dtype=np.float64)
    direction = np.sign(np.asarray(release_pose, dtype=np.float64) - cocked)
    tau_max = np.asarray(plant.limits.tau_max) * np.ones(n)
    qdot_max = np.asarray(plant.limits.qdot_max) * np.ones(n)
    windup, bang_max = int(round(1.5 / h)), int(round(1.0 / h))
    phase = {"braking_from": None}

    def controller(k: int, obs: JointState, pose: np.ndarray) -> np.ndarray:
        if k < windup:
            s = 0.5 - 0.5 * np.cos(np.pi * k / windup)
            return pd_torque(plant.gains, pose + s * (cocked - pose), obs)
        fast = np.any(np.abs(obs.qdot) >= speed_fraction * qdot_max)
        if phase["braking_from"] is None and (fast or k >= windup + bang_max):
            phase["braking_from"] = k
        if phase["braking_from"] is None:
            return 0.95 * tau_max * direction
        return np.clip(pd_torque(plant.gains, pose, obs) - 4.0 * plant.gains.kd * obs.qdot, -tau_max, tau_max)

    return SessionPlan("throw", int(round(duration / h)), controller, start)


def default_sessions(cfg, plant: PlantConfig, seed: int) -> List[SessionPlan]:
    """The standard collection: per-joint square and sine sweeps, 5 min of noise, one throw."""
    dg = cfg.datagen
    h = cfg.timestep
    n = plant.arm.n_joints
    sessions: List[SessionPlan] = []
    for joint in range(n):
        for tag, kind in (("square", "square"), ("sine", "sine")):
            specs = [
                ExcitationSpec(kind=kind, duration=dg.segment_duration, amplitude=a, frequency=f, target_joint=joint)
                for a in dg.amplitudes
                for f in dg.frequencies
            ]
            sessions.append(_targeted_plan(tag, joint, specs, plant, h))

    tau_max = np.asarray(plant.limits.tau_max) * np.ones(n)
    std = dg.noise_std if dg.noise_std is not None else float(np.min(tau_max)) / 3.0
    noise_spec = ExcitationSpec(
        kind="gaussian-noise", duration=dg.noise_duration, hold_range=(dg.hold_min, dg.hold_max), noise_std=std,
    )
    noise_seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
    torques, _ = gen_noise(noise_spec, noise_seed, n, tau_max, h)
    sessions.append(_noise_plan(torques, plant))

    sessions.append(throw_swing_plan(
        plant, cfg.task.cocked_pose, cfg.task.release_pose, dg.throw_duration, dg.throw_speed_fraction, h,
    ))
    return sessions


# --------- Dataset ---------

@dataclass
class Session:
    session_id: int
    tag: str
    q: np.ndarray
    qdot: np.ndarray
    tau_cmd: np.ndarray
    tau_motor: np.ndarray
    q_next: np.ndarray
    qdot_next: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.q.shape[0])

    def states(self) -> Tuple[np.ndarray, np.ndarray]:
        """Observed positions/velocities at steps 0..T (T + 1 rows)."""
        return (
            np.concatenate([self.q, self.q_next[-1:]]),
            np.concatenate([self.qdot, self.qdot_next[-1:]]),
        )


@dataclass
class Transition:
    state: JointState
    tau_cmd: np.ndarray
    next_state: JointState
    step_index: int
    source_signal: str


def column_names(n_joints: int) -> List[str]:
    cols = ["session_id", "step"]
    for group in ("q", "qdot", "tau_cmd", "tau_motor", "q_next", "qdot_next"):
        cols += [f"{group}_{j}" for j in range(n_joints)]
    return cols


class TransitionDataset:
    """Recorded transitions in session order, backed by one pandas frame."""

    def __init__(self, frame: pd.DataFrame, timestep: float, n_joints: int, tags: Dict[int, str], meta: Dict[str, Any]):
        self.frame = frame.reset_index(drop=True)
        self.timestep = float(timestep)
        self.n_joints = int(n_joints)
        self.tags = {int(k): str(v) for k, v in tags.items()}
        self.meta = dict(meta)
        self._sessions: Optional[Dict[int, Session]] = None

    def __len__(self) -> int:
        return int(self.frame.shape[0])

    def _group(self, name: str, part: pd.DataFrame) -> np.ndarray:
        return part[[f"{name}_{j}" for j in range(self.n_joints)]].to_numpy(dtype=np.float64)

    def sessions(self) -> Dict[int, Session]:
        if self._sessions is None:
            out: Dict[int, Session] = {}
            for sid, part in self.frame.groupby("session_id", sort=False):
                sid = int(sid)
                out[sid] = Session(
                    sid, self.tags.get(sid, "unknown"),
                    *(self._group(g, part) for g in ("q", "qdot", "tau_cmd", "tau_motor", "q_next", "qdot_next")),
                )
            self._sessions = out
        return self._sessions

    def session_ids(self, tags: Optional[Sequence[str]] = None) -> List[int]:
        return [sid for sid in self.sessions() if tags is None or self.tags[sid] in tags]

    def select(self, tags: Sequence[str]) -> "TransitionDataset":
        ids = set(self.session_ids(tags))
        frame = self.frame[self.frame["session_id"].isin(ids)]
        return TransitionDataset(frame, self.timestep, self.n_joints, {k: v for k, v in self.tags.items() if k in ids}, self.meta)

    def transitions(self, session_id: int):
        s = self.sessions()[session_id]
        for k in range(s.n_steps):
            yield Transition(
                JointState(s.q[k], s.qdot[k]), s.tau_cmd[k],
                JointState(s.q_next[k], s.qdot_next[k]), k, s.tag,
            )

    def chain_violations(self) -> List[Dict[str, Any]]:
        bad = []
        for sid, s in self.sessions().items():
            jumps = np.flatnonzero(
                np.any(s.q_next[:-1] != s.q[1:], axis=1) | np.any(s.qdot_next[:-1] != s.qdot[1:], axis=1)
            )
            for k in jumps[:5]:
                bad.append({"session_id": sid, "step": int(k)})
        return bad


def collect(
    plant_cfg: PlantConfig,
    sessions: Sequence[SessionPlan],
    seed: int,
    h: float = 0.005,
    meta: Optional[Dict[str, Any]] = None,
) -> TransitionDataset:
    """
    Roll every session on the reference plant and record observed transitions.
    Sessions of equal length run as one batch (rows never interact).
    A session that diverges is dropped with a warning.
    """
    if not plant_cfg.is_reference:
        raise ValueError("collect needs the reference plant (a PlantConfig with a transmission)")
    n = plant_cfg.arm.n_joints
    by_len: Dict[int, List[int]] = {}
    for i, s in enumerate(sessions):
        by_len.setdefault(s.n_steps, []).append(i)

    records: Dict[int, np.ndarray] = {}
    for n_steps, idx in by_len.items():
        plant = ReferencePlant(plant_cfg.with_mode("torque"), len(idx), h)
        poses = np.stack([sessions[i].start_pose for i in idx])
        plant.reset(np.arange(len(idx)), poses, np.zeros_like(poses))
        buf = np.empty((len(idx), n_steps, 6 * n))
        alive = np.ones(len(idx), dtype=bool)
        for k in range(n_steps):
            obs = plant.observed
            tau = np.stack([
                sessions[i].controller(k, JointState(obs.q[r], obs.qdot[r]), poses[r]) for r, i in enumerate(idx)
            ])
            q0, qd0 = obs.q.copy(), obs.qdot.copy()
            diverged = plant.step(tau)
            if np.any(diverged & alive):
                for r in np.flatnonzero(diverged & alive):
                    logger.warning("session %d (%s) diverged at step %d; dropped", idx[r], sessions[idx[r]].tag, k)
                alive &= ~diverged
            nxt = plant.observed
            buf[:, k] = np.concatenate([q0, qd0, tau, plant.applied_torque, nxt.q, nxt.qdot], axis=1)
        for r, i in enumerate(idx):
            if alive[r]:
                records[i] = buf[r]

    frames, tags = [], {}
    for i in sorted(records):
        rec = records[i]
        part = pd.DataFrame(rec, columns=column_names(n)[2:])
        part.insert(0, "step", np.arange(rec.shape[0], dtype=np.int64))
        part.insert(0, "session_id", np.full(rec.shape[0], i, dtype=np.int64))
        frames.append(part)
        tags[i] = sessions[i].tag
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=column_names(n))
    info = {"seed": int(seed)}
    info.update(meta or {})
    ds = TransitionDataset(frame, h, n, tags, info)
    logger.info("collected %d transitions in %d session(s)", len(ds), len(tags))
    return ds


def split_train_test(ds: TransitionDataset) -> Tuple[TransitionDataset, TransitionDataset]:
    """Square/sine/noise sessions train; the scripted throw is held out."""
    from .loaders import DataLoadError

    present = set(ds.tags.values())
    missing = [t for t in TRAIN_TAGS + TEST_TAGS if t not in present]
    if missing:
        raise DataLoadError("Dataset is missing session kinds.", payload={"missing": missing, "present": sorted(present)})
    return ds.select(TRAIN_TAGS), ds.select(TEST_TAGS)
