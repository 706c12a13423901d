"""
File: src/tasks/envs.py
Task: Vectorized arm task environments over any position-mode plant.

- TrackingEnv: pre-training. Random joint-space commands, tracked as an arm
  tip pose (x, z, orientation); task embedding zeroed.
- ThrowEnv: fine-tuning. Set-up / throw / settle phase machine around the
  hand-designed reference, a ball that rides in the tip bucket and a
  kinematic release rule.
- CommandHeadEnv: wraps a ThrowEnv for the no-e2e ablation. A learned head
  offsets the reference snapshot seen by a frozen pre-trained policy.

Both base envs share one observation frame layout, so pre-trained and
fine-tuned policies have identical input sizes:
  [q_obs (n), qdot_obs / qdot_max (n), previous action (n), reference q (n),
   reference tip pose (3), phase one-hot (3), throw timer (1)]
stacked over the last H policy steps, oldest first.

Planar adaptation of the throw rewards: lateral terms and base-posture terms
(p_z, g_x, g_y) of the legged-robot formulation are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..config import WorkbenchConfig
from ..learn.ppo import Actor
from ..sim.dynamics import GRAVITY, ArmModel, BallState, ball_flight_distance, ballistic_step, bucket_normal, ee_kinematics
from .reference import PHASE_NAMES, SETTLE, SETUP, THROW, ReferenceTrajectory, reference_ee

logger = logging.getLogger(__name__)

EMBED_DIM = 4  # phase one-hot (3) + throw timer


def frame_dim(n_joints: int) -> int:
    return 4 * n_joints + 3 + EMBED_DIM


# -------------------------
# Reward terms
# -------------------------

def wrap_angle(x: np.ndarray) -> np.ndarray:
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def tracking_reward(pose_cmd: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """5 * sum over (x, z, orientation) of exp(-2 |error|) / 3."""
    err = np.abs(pose_cmd - pose)
    err[..., 2] = np.abs(wrap_angle(pose_cmd[..., 2] - pose[..., 2]))
    return 5.0 * np.sum(np.exp(-2.0 * err) / 3.0, axis=-1)


def smoothness_penalty(a: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    first = np.sum((a - a1) ** 2, axis=-1)
    second = np.sum((a - 2.0 * a1 + a2) ** 2, axis=-1)
    return -0.05 * (first + 0.5 * second)


def power_penalty(mean_power: np.ndarray) -> np.ndarray:
    return -1.0e-4 * mean_power


def joint_limit_penalty(q: np.ndarray, limits: Tuple[float, float]) -> np.ndarray:
    lo, hi = limits
    excess = np.maximum(q - hi, 0.0) + np.maximum(lo - q, 0.0)
    return -10.0 * np.sum(excess, axis=-1)


def setup_reward(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    # tracking form; the legged formulation's "+ |q - q_ref|_1" would reward error
    return 5.0 * np.exp(-2.0 * np.sum(np.abs(q - q_ref), axis=-1))


def throw_reward(ball_vel: np.ndarray) -> np.ndarray:
    return 20.0 * np.maximum(ball_vel[..., 0], 0.0) + 20.0 * np.maximum(ball_vel[..., 1], 0.0)


def settle_reward(qdot: np.ndarray, q: np.ndarray, q_rest: np.ndarray) -> np.ndarray:
    return -np.sum(qdot * qdot, axis=-1) - 0.1 * np.sum(np.abs(q - q_rest), axis=-1)


def release_condition(ee_accel: np.ndarray, orientation: np.ndarray, gravity: float = GRAVITY) -> np.ndarray:
    """
    True where the bucket would have to pull on the ball to keep it:
    (a_ee - g) . u < 0 with g = (0, -gravity) and u the bucket opening direction.
    """
    u = bucket_normal(orientation)
    rel = ee_accel.copy()
    rel[..., 1] = rel[..., 1] + gravity
    return np.sum(rel * u, axis=-1) < 0.0


# -------------------------
# Config
# -------------------------

@dataclass
class TaskEnvConfig:
    n_envs: int = 256
    h: float = 0.005
    policy_dt: float = 0.02
    obs_history: int = 10
    action_scale: float = 1.0
    default_pose: Tuple[float, ...] = (-0.9, 0.9)
    joint_limits: Tuple[float, float] = (-3.0, 3.0)
    qdot_max: Any = 6.0
    init_noise: float = 0.02
    # throw
    episode_s: float = 5.0
    setup_s: float = 2.5
    throw_s: float = 1.0
    ball_attach_s: float = 1.5
    retain_throw_p: float = 0.3
    settle_on_reset_p: float = 0.2
    release_pose: Tuple[float, ...] = (-0.6, 0.4)
    # pre-training commands
    pretrain_episode_s: float = 14.0
    command_resample_s: float = 7.0
    command_interp_s: Tuple[float, float] = (2.0, 5.0)
    command_low: Optional[Tuple[float, ...]] = None
    command_high: Optional[Tuple[float, ...]] = None

    @property
    def substeps(self) -> int:
        return int(round(self.policy_dt / self.h))

    @classmethod
    def from_workbench(cls, cfg: WorkbenchConfig, n_envs: int) -> "TaskEnvConfig":
        t = cfg.task
        poses = np.array([t.rest_pose, t.cocked_pose, t.release_pose], dtype=np.float64)
        # command box: the throw's joint range with some margin
        return cls(
            n_envs=n_envs,
            h=cfg.timestep,
            policy_dt=t.policy_dt,
            obs_history=t.obs_history,
            action_scale=t.action_scale,
            default_pose=tuple(t.rest_pose),
            joint_limits=tuple(t.joint_limits),
            qdot_max=cfg.qdot_max.copy(),
            episode_s=t.episode_s,
            setup_s=t.setup_s,
            throw_s=t.throw_s,
            ball_attach_s=t.ball_attach_s,
            retain_throw_p=t.retain_throw_p,
            settle_on_reset_p=t.settle_on_reset_p,
            release_pose=tuple(t.release_pose),
            pretrain_episode_s=t.pretrain_episode_s,
            command_resample_s=t.command_resample_s,
            command_interp_s=tuple(t.command_interp_s),
            command_low=tuple(poses.min(axis=0) - 0.3),
            command_high=tuple(poses.max(axis=0) + 0.3),
        )


# -------------------------
# Shared base
# -------------------------

class ArmTaskEnv:
    """
    Policy steps of `policy_dt`, each `substeps` plant steps with a constant
    joint target q_des = default_pose + action_scale * action. Envs that
    finish are reset in place; their last episode is reported in
    info["episode_records"].
    """

    def __init__(self, plant, model: ArmModel, cfg: TaskEnvConfig, seed: int):
        if plant.control_mode != "position":
            raise ValueError("task envs drive position-mode plants")
        self.plant = plant
        self.model = model
        self.cfg = cfg
        self.n_envs = int(cfg.n_envs)
        if plant.n_envs != self.n_envs:
            raise ValueError(f"plant has {plant.n_envs} envs, task config {self.n_envs}")
        self.n_joints = model.n_joints
        self.frame_dim = frame_dim(self.n_joints)
        self.obs_dim = self.frame_dim * cfg.obs_history
        self.action_dim = self.n_joints
        self.default_pose = np.asarray(cfg.default_pose, dtype=np.float64)
        self.qdot_max = np.broadcast_to(np.asarray(cfg.qdot_max, dtype=np.float64), (self.n_joints,))
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(self.n_envs)]

        E, n = self.n_envs, self.n_joints
        self.history = np.zeros((E, cfg.obs_history, self.frame_dim))
        self.a1 = np.zeros((E, n))
        self.a2 = np.zeros((E, n))
        self.t_episode = np.zeros(E)
        self.ep_return = np.zeros(E)
        self.peak_power = np.zeros(E)
        self.diverged = np.zeros(E, dtype=bool)

    # --------- subclass hooks ---------

    def _reset_task(self, ids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Draw task state for `ids`; return their start (q, qdot)."""
        raise NotImplementedError

    def _reference(self) -> Tuple[np.ndarray, np.ndarray]:
        """Current (reference q, reference tip pose) for every env."""
        raise NotImplementedError

    def _embedding(self) -> np.ndarray:
        return np.zeros((self.n_envs, EMBED_DIM))

    def _substep(self, k: int) -> None:
        pass

    def _task_rewards(self, q_obs: np.ndarray) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def _advance_time(self) -> None:
        self.t_episode += self.cfg.policy_dt

    def _finished(self) -> Tuple[np.ndarray, np.ndarray]:
        """(terminated, timed out) per env, evaluated after the step."""
        raise NotImplementedError

    def _record(self, env: int) -> Dict[str, Any]:
        return {"return": float(self.ep_return[env]), "diverged": bool(self.diverged[env])}

    # --------- observation ---------

    def frame(self) -> np.ndarray:
        obs = self.plant.observed
        ref_q, ref_pose = self._reference()
        return np.concatenate(
            [obs.q, obs.qdot / self.qdot_max, self.a1, ref_q, ref_pose, self._embedding()], axis=-1
        )

    def observation(self) -> np.ndarray:
        return self.history.reshape(self.n_envs, -1).copy()

    def _push_frame(self, fresh: np.ndarray) -> None:
        f = self.frame()
        self.history[:, :-1] = self.history[:, 1:]
        self.history[:, -1] = f
        if fresh.size:
            self.history[fresh] = f[fresh][:, None, :]

    # --------- VecEnv ---------

    def _reset_envs(self, ids: np.ndarray) -> None:
        if ids.size == 0:
            return
        q0, qd0 = self._reset_task(ids)
        self.plant.reset(ids, q0, qd0)
        self.a1[ids] = 0.0
        self.a2[ids] = 0.0
        self.ep_return[ids] = 0.0
        self.peak_power[ids] = 0.0
        self.diverged[ids] = False

    def reset_all(self) -> np.ndarray:
        ids = np.arange(self.n_envs)
        self._reset_envs(ids)
        self._push_frame(ids)
        return self.observation()

    def joint_targets(self, actions: np.ndarray) -> np.ndarray:
        return self.default_pose + self.cfg.action_scale * actions

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions, dtype=np.float64)
        q_des = self.joint_targets(actions)
        power_sum = np.zeros(self.n_envs)
        for k in range(self.cfg.substeps):
            flags = self.plant.step(q_des)
            self.diverged |= flags
            phys = self.plant.physical
            power = np.sum(np.abs(self.plant.applied_torque * phys.qdot), axis=-1)
            power_sum += power
            self.peak_power = np.maximum(self.peak_power, power)
            self._substep(k)

        obs_state = self.plant.observed
        terms = self._task_rewards(obs_state.q)
        terms["smooth"] = smoothness_penalty(actions, self.a1, self.a2)
        terms["power"] = power_penalty(power_sum / self.cfg.substeps)
        terms["joint_limit"] = joint_limit_penalty(obs_state.q, self.cfg.joint_limits)
        reward = np.zeros(self.n_envs)
        for v in terms.values():
            reward = reward + v
        self.ep_return += reward
        self.a2, self.a1 = self.a1, actions.copy()
        self._advance_time()

        terminated, timed_out = self._finished()
        terminated = terminated | self.diverged
        done = terminated | timed_out
        finished = np.flatnonzero(done)
        records = [dict(env=int(e), **self._record(int(e))) for e in finished]
        self._reset_envs(finished)
        self._push_frame(finished)
        info = {
            "timeouts": timed_out & ~terminated,
            "reward_terms": terms,
            "episode_returns": [r["return"] for r in records],
            "episode_records": records,
        }
        return self.observation(), reward, done, info


# -------------------------
# Pre-training: tip-pose tracking
# -------------------------

class TrackingEnv(ArmTaskEnv):
    """
    Commands are joint-space samples inside the command box, shown to the
    policy as joint targets and as the matching tip pose. A new target is
    drawn every `command_resample_s` and approached linearly over a drawn
    2-5 s.
    """

    def __init__(self, plant, model: ArmModel, cfg: TaskEnvConfig, seed: int):
        super().__init__(plant, model, cfg, seed)
        E, n = self.n_envs, self.n_joints
        self.low = np.asarray(cfg.command_low if cfg.command_low is not None else (cfg.joint_limits[0],) * n)
        self.high = np.asarray(cfg.command_high if cfg.command_high is not None else (cfg.joint_limits[1],) * n)
        self.cmd_from = np.zeros((E, n))
        self.cmd_to = np.zeros((E, n))
        self.cmd_t0 = np.zeros(E)
        self.cmd_dur = np.ones(E)
        self.next_resample = np.zeros(E)

    def _draw_command(self, env: int, now: float) -> None:
        rng = self.rngs[env]
        self.cmd_from[env] = self.command()[env]
        self.cmd_to[env] = rng.uniform(self.low, self.high)
        self.cmd_t0[env] = now
        self.cmd_dur[env] = rng.uniform(*self.cfg.command_interp_s)
        self.next_resample[env] = now + self.cfg.command_resample_s

    def command(self) -> np.ndarray:
        s = np.clip((self.t_episode - self.cmd_t0) / self.cmd_dur, 0.0, 1.0)[:, None]
        return self.cmd_from + (self.cmd_to - self.cmd_from) * s

    def _reset_task(self, ids):
        n = self.n_joints
        q0 = np.stack([self.default_pose + self.rngs[e].uniform(-self.cfg.init_noise, self.cfg.init_noise, n) for e in ids])
        self.t_episode[ids] = 0.0
        self.cmd_from[ids] = q0
        self.cmd_to[ids] = q0
        self.cmd_t0[ids] = 0.0
        for e in ids:
            self._draw_command(int(e), 0.0)
        return q0, np.zeros_like(q0)

    def _reference(self):
        q_cmd = self.command()
        return q_cmd, reference_ee(self.model, q_cmd)

    def _advance_time(self) -> None:
        super()._advance_time()
        for e in np.flatnonzero(self.t_episode >= self.next_resample - 1e-9):
            self._draw_command(int(e), float(self.t_episode[e]))

    def _task_rewards(self, q_obs):
        _, pose_cmd = self._reference()
        pos, _, orient = ee_kinematics(self.model, self.plant.physical)
        pose = np.concatenate([pos, orient[:, None]], axis=-1)
        return {"tracking": tracking_reward(pose_cmd, pose)}

    def _finished(self):
        timed_out = self.t_episode >= self.cfg.pretrain_episode_s - 1e-9
        return np.zeros(self.n_envs, dtype=bool), timed_out

    def tracking_error(self) -> np.ndarray:
        """Euclidean tip-position error to the current command, per env."""
        _, pose_cmd = self._reference()
        pos, _, _ = ee_kinematics(self.model, self.plant.physical)
        return np.linalg.norm(pose_cmd[:, :2] - pos, axis=-1)


# -------------------------
# Fine-tuning: throw
# -------------------------

class ThrowEnv(ArmTaskEnv):
    def __init__(self, plant, model: ArmModel, cfg: TaskEnvConfig, reference: ReferenceTrajectory, seed: int):
        super().__init__(plant, model, cfg, seed)
        E = self.n_envs
        self.reference = reference
        self.rest_pose = reference.phases[SETTLE][-1].copy()
        self.phase = np.zeros(E, dtype=np.int64)
        self.t_phase = np.zeros(E)
        self.throw_deadline = np.full(E, cfg.throw_s)
        self.ball = BallState(np.zeros((E, 2)), np.zeros((E, 2)), np.zeros(E, dtype=bool))
        self.released = np.zeros(E, dtype=bool)
        self.dropped = np.zeros(E, dtype=bool)
        self.release_vel = np.zeros((E, 2))
        self.release_pos = np.zeros((E, 2))
        self.distance = np.zeros(E)
        self.release_step_vel = np.zeros((E, 2))
        self.ee_vel_prev = np.zeros((E, 2))
        self.t_throw_start = np.full(E, np.nan)
        self.t_settle_start = np.full(E, np.nan)
        self.t_release = np.full(E, np.nan)
        self.start_phase = np.zeros(E, dtype=np.int64)
        self._sub_t = np.zeros(E)

    def _reset_task(self, ids):
        n, cfg = self.n_joints, self.cfg
        q0 = np.zeros((ids.size, n))
        qd0 = np.zeros((ids.size, n))
        for k, e in enumerate(ids):
            rng = self.rngs[e]
            noise = rng.uniform(-cfg.init_noise, cfg.init_noise, n)
            if rng.random() < cfg.settle_on_reset_p:
                self.phase[e] = SETTLE
                self.t_episode[e] = cfg.setup_s + cfg.throw_s
                q0[k] = np.asarray(cfg.release_pose) + noise
                qd0[k] = rng.uniform(-0.5, 0.5, n)
            else:
                self.phase[e] = SETUP
                self.t_episode[e] = 0.0
                q0[k] = self.default_pose + noise
        self.start_phase[ids] = self.phase[ids]
        self.t_phase[ids] = 0.0
        self.throw_deadline[ids] = cfg.throw_s
        self.ball.attached[ids] = False
        self.ball.position[ids] = 0.0
        self.ball.velocity[ids] = 0.0
        # settle-start episodes begin after a throw that is not scored
        self.released[ids] = self.phase[ids] == SETTLE
        self.dropped[ids] = False
        self.release_vel[ids] = 0.0
        self.release_pos[ids] = 0.0
        self.distance[ids] = 0.0
        self.ee_vel_prev[ids] = 0.0
        self.t_throw_start[ids] = np.nan
        self.t_settle_start[ids] = np.where(self.phase[ids] == SETTLE, self.t_episode[ids], np.nan)
        self.t_release[ids] = np.nan
        return q0, qd0

    def throw_timer(self) -> np.ndarray:
        return np.where(self.phase == THROW, np.minimum(self.t_phase / self.cfg.throw_s, 1.0), 0.0)

    def _reference(self):
        q_ref = self.reference.at(self.phase, self.t_phase)
        return q_ref, reference_ee(self.model, q_ref)

    def _embedding(self):
        onehot = np.zeros((self.n_envs, 3))
        onehot[np.arange(self.n_envs), self.phase] = 1.0
        return np.concatenate([onehot, self.throw_timer()[:, None]], axis=-1)

    def step(self, actions):
        self.release_step_vel[:] = 0.0
        self._step_released = np.zeros(self.n_envs, dtype=bool)
        return super().step(actions)

    def _substep(self, k: int) -> None:
        cfg = self.cfg
        t_now = self.t_episode + (k + 1) * cfg.h
        pos, vel, orient = ee_kinematics(self.model, self.plant.physical)
        accel = (vel - self.ee_vel_prev) / cfg.h
        self.ee_vel_prev = vel

        attach = (self.phase == SETUP) & ~self.ball.attached & ~self.released & ~self.dropped & (t_now >= cfg.ball_attach_s - 1e-9)
        riding = self.ball.attached & ~attach
        lets_go = riding & release_condition(accel, orient, self.model.gravity)
        drop = lets_go & (self.phase == SETUP)
        release = lets_go & (self.phase != SETUP)

        self.dropped |= drop
        if np.any(release):
            self.released |= release
            self._step_released |= release
            self.release_pos[release] = pos[release]
            self.release_vel[release] = vel[release]
            self.release_step_vel[release] = vel[release]
            self.t_release[release] = t_now[release]
            travel = ball_flight_distance(pos[release], vel[release], 0.0, self.model.gravity)
            self.distance[release] = pos[release, 0] + travel

        self.ball.attached = (self.ball.attached | attach) & ~lets_go
        flying = ~self.ball.attached
        moved = ballistic_step(BallState(self.ball.position, self.ball.velocity, self.ball.attached), cfg.h, self.model.gravity)
        self.ball.position = np.where(flying[:, None], moved.position, pos)
        self.ball.velocity = np.where(flying[:, None], moved.velocity, vel)
        # just-released balls start their flight from the tip state
        self.ball.position[lets_go] = pos[lets_go]
        self.ball.velocity[lets_go] = vel[lets_go]

    def _task_rewards(self, q_obs):
        q_ref, _ = self._reference()
        ball_vel = np.where(self.ball.attached[:, None], self.ball.velocity, self.release_step_vel)
        throwing = (self.phase == THROW) & (self.ball.attached | self._step_released)
        return {
            "setup": np.where(self.phase == SETUP, setup_reward(q_obs, q_ref), 0.0),
            "throw": np.where(throwing, throw_reward(ball_vel), 0.0),
            "settle": np.where(self.phase == SETTLE, settle_reward(self.plant.observed.qdot, q_obs, self.rest_pose), 0.0),
        }

    def _advance_time(self) -> None:
        cfg = self.cfg
        super()._advance_time()
        self.t_phase += cfg.policy_dt
        eps = 1e-9
        to_throw = (self.phase == SETUP) & (self.t_phase >= cfg.setup_s - eps)
        self.phase[to_throw] = THROW
        self.t_phase[to_throw] = 0.0
        self.t_throw_start[to_throw] = self.t_episode[to_throw]

        due = np.flatnonzero((self.phase == THROW) & ~to_throw & (self.t_phase >= self.throw_deadline - eps))
        for e in due:
            if self.rngs[e].random() < cfg.retain_throw_p:
                self.throw_deadline[e] += cfg.throw_s
            else:
                self.phase[e] = SETTLE
                self.t_phase[e] = 0.0
                self.t_settle_start[e] = self.t_episode[e]

    def _finished(self):
        timed_out = self.t_episode >= self.cfg.episode_s - 1e-9
        return self.dropped.copy(), timed_out

    def _record(self, env: int) -> Dict[str, Any]:
        rec = super()._record(env)
        speed = float(np.linalg.norm(self.release_vel[env])) if self.released[env] else 0.0
        scored = bool(self.start_phase[env] == SETUP)
        rec.update({
            "start_phase": PHASE_NAMES[int(self.start_phase[env])],
            "scored": scored,
            "released": bool(self.released[env]) and scored,
            "dropped": bool(self.dropped[env]),
            "distance": float(self.distance[env]) if scored else 0.0,
            "release_speed": speed if scored else 0.0,
            "peak_power": float(self.peak_power[env]),
            "t_throw_start": float(self.t_throw_start[env]),
            "t_settle_start": float(self.t_settle_start[env]),
            "t_release": float(self.t_release[env]),
            "final_phase": PHASE_NAMES[int(self.phase[env])],
        })
        return rec


# -------------------------
# no-e2e: command head over a frozen policy
# -------------------------

class CommandHeadEnv:
    """
    The learned head outputs an offset (scaled by `scale`) to the reference
    joint targets in the newest frame; the frozen pre-trained policy then
    acts on that edited history with its mean action.
    """

    def __init__(self, inner: ArmTaskEnv, frozen: Actor, scale: float):
        self.inner = inner
        self.frozen = frozen
        self.scale = float(scale)
        self.n_envs = inner.n_envs
        self.obs_dim = inner.obs_dim
        self.action_dim = inner.n_joints
        n = inner.n_joints
        self._ref_q = slice(3 * n, 4 * n)
        self._ref_pose = slice(4 * n, 4 * n + 3)
        self.edited = inner.history.copy()

    def _edit(self, frame: np.ndarray, offset: np.ndarray) -> np.ndarray:
        out = frame.copy()
        q_ref = out[:, self._ref_q] + self.scale * offset
        out[:, self._ref_q] = q_ref
        out[:, self._ref_pose] = reference_ee(self.inner.model, q_ref)
        return out

    def reset_all(self) -> np.ndarray:
        obs = self.inner.reset_all()
        self.edited = self.inner.history.copy()
        return obs

    def step(self, actions: np.ndarray):
        hist = self.edited.copy()
        hist[:, -1] = self._edit(self.inner.history[:, -1], np.asarray(actions, dtype=np.float64))
        joint_actions = self.frozen.mean(hist.reshape(self.n_envs, -1))
        obs, reward, done, info = self.inner.step(joint_actions)
        self.edited[:, :-1] = hist[:, 1:]
        self.edited[:, -1] = self.inner.history[:, -1]
        fresh = np.flatnonzero(done)
        if fresh.size:
            self.edited[fresh] = self.inner.history[fresh]
        return obs, reward, done, info
