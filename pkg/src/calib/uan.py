"""
File: src/calib/uan.py
Task: Unsupervised Actuator Net. A small per-joint policy reads a 20-step
history of (PD-equivalent position error, joint velocity) and outputs a
corrective torque that is added to the idealized simulator after clipping.
It is trained with PPO to make free-running simulated replays of recorded
commands track the recorded joint positions.

Contents:
- ErrorHistory / build_observation: the per-joint 40-value input;
- uan_reward: the transition-matching reward;
- oracle_correction: the exact one-step correction (verification oracle);
- UanEnv: the vectorized training env over a transition dataset;
- UanModel / calibrated_step / UanPlant: deterministic deployment;
- train_uan: the training entry point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..config import WorkbenchConfig, build_plant_config
from ..data.datagen import TransitionDataset
from ..learn.checkpoints import load_checkpoint, save_checkpoint
from ..learn.nn import GaussianHead, MlpParams, forward
from ..learn.ppo import Actor, Critic, PpoConfig, TrainResult, train_ppo
from ..sim.actuator import PlantConfig, clip_command, step_ideal
from ..sim.dynamics import JointState, bias_forces, mass_matrix
from ..sim.plants import IdealPlant, PlantBatch

logger = logging.getLogger(__name__)

HISTORY_LEN = 20


# -------------------------
# Observation
# -------------------------

def pd_equivalent_error(tau_cmd: np.ndarray, qdot: np.ndarray, kp, kd) -> np.ndarray:
    """(tau + kd qdot) / kp; equals q_des - q when tau came from the PD law."""
    return (tau_cmd + kd * qdot) / kp


class ErrorHistory:
    """
    Ring of the last H (position error, velocity) pairs per env and joint,
    stored oldest to newest in shape (E, n, H, 2). Zero-filled on reset.
    """

    def __init__(self, n_envs: int, n_joints: int, length: int = HISTORY_LEN):
        self.data = np.zeros((n_envs, n_joints, length, 2))

    @property
    def length(self) -> int:
        return self.data.shape[2]

    def clear(self, env_ids: Optional[Sequence[int]] = None) -> None:
        if env_ids is None:
            self.data[:] = 0.0
        else:
            self.data[np.asarray(env_ids, dtype=np.int64)] = 0.0

    def push(self, dq: np.ndarray, qdot: np.ndarray) -> None:
        self.data[:, :, :-1, :] = self.data[:, :, 1:, :]
        self.data[:, :, -1, 0] = dq
        self.data[:, :, -1, 1] = qdot

    def copy(self) -> "ErrorHistory":
        out = ErrorHistory.__new__(ErrorHistory)
        out.data = self.data.copy()
        return out


def build_observation(history: np.ndarray, dq_scale: float, qdot_max) -> np.ndarray:
    """
    Flattened scaled pairs, oldest to newest: (..., H, 2) -> (..., 2H).
    """
    scale = np.stack(np.broadcast_arrays(np.float64(dq_scale), np.asarray(qdot_max, dtype=np.float64)), axis=-1)
    if scale.ndim > 1:
        # per-joint qdot_max: (n, 2) -> (n, 1, 2) to broadcast over the history axis
        scale = scale[:, None, :]
    scaled = history / scale
    return scaled.reshape(scaled.shape[:-2] + (-1,))


# -------------------------
# Reward / oracle
# -------------------------

def uan_reward(
    q_real: np.ndarray,
    q_sim: np.ndarray,
    action: np.ndarray,
    prev_action: np.ndarray,
    smooth_scale: float = 0.5,
) -> np.ndarray:
    """
    Per-joint transition-matching reward:
    -1.5|e| + 4 exp(-100 e^2) + 4 exp(-300 e^2) + 5 exp(-1000 e^2) + w exp(-0.5 |a - a_prev|)
    with w = `smooth_scale`. `action` is the normalized policy output in [-1, 1], not torque.
    """
    e = q_real - q_sim
    e2 = e * e
    pos = -1.5 * np.abs(e) + 4.0 * np.exp(-100.0 * e2) + 4.0 * np.exp(-300.0 * e2) + 5.0 * np.exp(-1000.0 * e2)
    return pos + smooth_term(action, prev_action, smooth_scale)


def smooth_term(action: np.ndarray, prev_action: np.ndarray, smooth_scale: float = 0.5) -> np.ndarray:
    return smooth_scale * np.exp(-0.5 * np.abs(action - prev_action))


def oracle_correction(
    sim_cfg: PlantConfig,
    state: JointState,
    tau_cmd: np.ndarray,
    qdot_next_real: np.ndarray,
    h: float,
) -> np.ndarray:
    """delta_tau = M (qdot_next - qdot) / h - tau_clipped + c: step_ideal then lands on qdot_next."""
    m = mass_matrix(sim_cfg.arm, state.q, sim_cfg.sim_armature)
    accel = (np.asarray(qdot_next_real) - state.qdot) / h
    tau_clip = clip_command(np.asarray(tau_cmd, dtype=np.float64), state.qdot, sim_cfg.limits)
    return np.einsum("...ij,...j->...i", m, accel) - tau_clip + bias_forces(sim_cfg.arm, state)


# -------------------------
# Training env
# -------------------------

@dataclass
class UanEnvConfig:
    episode_s: float = 20.0
    delta_tau_max: Any = 15.0
    n_envs: int = 256
    h: float = 0.005
    history: int = HISTORY_LEN
    dq_scale: float = 0.5
    teacher_forcing: bool = False
    max_error: float = 0.5
    smooth_scale: float = 0.5

    @classmethod
    def from_workbench(cls, cfg: WorkbenchConfig) -> "UanEnvConfig":
        return cls(
            episode_s=cfg.uan.episode_s,
            delta_tau_max=cfg.delta_tau_max,
            n_envs=cfg.ppo_uan.n_envs,
            h=cfg.timestep,
            history=cfg.uan.history,
            dq_scale=cfg.uan.dq_scale,
            teacher_forcing=cfg.uan.teacher_forcing,
            max_error=cfg.uan.max_error,
            smooth_scale=cfg.uan.smooth_scale,
        )


class UanEnv:
    """
    Each env replays recorded commands into the sim from a uniformly sampled
    start: a session is drawn uniformly, then a start index that leaves a full
    episode of recording. Free-running by default: the sim state is only reset
    to the recording at episode start. Sessions shorter than an episode wrap to
    a fresh sample with a cleared history. Teacher forcing re-syncs every step.
    Observations are the stacked per-joint histories, shape (E, n * 2H).
    """

    def __init__(self, dataset: TransitionDataset, sim_cfg: PlantConfig, env_cfg: UanEnvConfig, seed: int, plant=None):
        if dataset.timestep != env_cfg.h:
            raise ValueError(f"dataset timestep {dataset.timestep} != env timestep {env_cfg.h}")
        self.cfg = env_cfg
        self.sim_cfg = sim_cfg.as_ideal().with_mode("torque")
        self.n_envs = int(env_cfg.n_envs)
        self.n_joints = dataset.n_joints
        self.plant = plant if plant is not None else IdealPlant(self.sim_cfg, self.n_envs, env_cfg.h)
        self.history = ErrorHistory(self.n_envs, self.n_joints, env_cfg.history)
        self.obs_dim = self.n_joints * 2 * env_cfg.history
        self.action_dim = self.n_joints
        self.delta_tau_max = np.broadcast_to(np.asarray(env_cfg.delta_tau_max, dtype=np.float64), (self.n_joints,))
        self.max_steps = int(round(env_cfg.episode_s / env_cfg.h))

        sessions = list(dataset.sessions().values())
        if not sessions:
            raise ValueError("UanEnv needs a non-empty dataset")
        # sessions laid end to end; a row is addressed as offsets[session] + cursor
        self._q = np.concatenate([s.q for s in sessions])
        self._qdot = np.concatenate([s.qdot for s in sessions])
        self._tau = np.concatenate([s.tau_cmd for s in sessions])
        self._q_next = np.concatenate([s.q_next for s in sessions])
        self._offsets = np.cumsum([0] + [s.n_steps for s in sessions])
        self._lengths = np.diff(self._offsets)
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(self.n_envs)]

        self.session = np.zeros(self.n_envs, dtype=np.int64)
        self.cursor = np.zeros(self.n_envs, dtype=np.int64)
        self.steps = np.zeros(self.n_envs, dtype=np.int64)
        self.prev_action = np.zeros((self.n_envs, self.n_joints))
        self.ep_return = np.zeros(self.n_envs)

    # --------- helpers ---------

    def _sample_start(self, env: int) -> Tuple[int, int]:
        rng = self.rngs[env]
        s = int(rng.integers(0, len(self._lengths)))
        slack = int(self._lengths[s]) - self.max_steps
        # short sessions start at 0 and wrap when they run out
        return s, int(rng.integers(0, slack + 1)) if slack >= 0 else 0

    def _rows(self, envs: np.ndarray) -> np.ndarray:
        return self._offsets[self.session[envs]] + self.cursor[envs]

    def _sync(self, envs: np.ndarray) -> None:
        if envs.size:
            rows = self._rows(envs)
            self.plant.set_state(envs, self._q[rows], self._qdot[rows])

    def _push_history(self) -> None:
        tau = self._tau[self._rows(np.arange(self.n_envs))]
        qdot = self.plant.observed.qdot
        gains = self.sim_cfg.gains
        self.history.push(pd_equivalent_error(tau, qdot, gains.kp, gains.kd), qdot)

    def observation(self) -> np.ndarray:
        obs = build_observation(self.history.data, self.cfg.dq_scale, self.sim_cfg.limits.qdot_max)
        return obs.reshape(self.n_envs, -1)

    def _reset_envs(self, envs: np.ndarray) -> None:
        for e in envs:
            self.session[e], self.cursor[e] = self._sample_start(int(e))
        self.steps[envs] = 0
        self.prev_action[envs] = 0.0
        self.ep_return[envs] = 0.0
        self.history.clear(envs)
        if envs.size:
            rows = self._rows(envs)
            self.plant.reset(envs, self._q[rows], self._qdot[rows])

    # --------- VecEnv ---------

    def reset_all(self) -> np.ndarray:
        self._reset_envs(np.arange(self.n_envs))
        self._push_history()
        return self.observation()

    def step(self, actions: np.ndarray):
        all_envs = np.arange(self.n_envs)
        rows = self._rows(all_envs)
        actions = np.clip(actions, -1.0, 1.0)
        delta = self.delta_tau_max * actions
        diverged = self.plant.step(self._tau[rows], extra_tau=delta)

        q_real = self._q_next[rows]
        q_sim = self.plant.observed.q
        per_joint = uan_reward(q_real, q_sim, actions, self.prev_action, self.cfg.smooth_scale)
        reward = per_joint.mean(axis=1)
        err = np.abs(q_real - q_sim)
        smooth = smooth_term(actions, self.prev_action, self.cfg.smooth_scale).mean(axis=1)
        self.prev_action = actions
        self.ep_return += reward

        self.cursor += 1
        self.steps += 1
        ended = self.cursor >= self._lengths[self.session]
        wrapped = np.flatnonzero(ended)
        for e in wrapped:
            self.session[e], self.cursor[e] = self._sample_start(int(e))
        self.history.clear(wrapped)
        if self.cfg.teacher_forcing:
            self._sync(all_envs)
        else:
            self._sync(wrapped)

        too_far = np.any(err > self.cfg.max_error, axis=1)
        timeout = self.steps >= self.max_steps
        done = diverged | too_far | timeout
        timeouts = timeout & ~(diverged | too_far)
        finished = np.flatnonzero(done)
        episode_returns = [float(self.ep_return[e]) for e in finished]
        self._reset_envs(finished)
        self._push_history()

        info = {
            "timeouts": timeouts,
            "episode_returns": episode_returns,
            "reward_terms": {
                "abs_error": err.mean(axis=1),
                "smooth": smooth,
                "diverged": diverged.astype(np.float64),
                "terminated": too_far.astype(np.float64),
            },
        }
        return self.observation(), reward, done, info


# -------------------------
# Deployment
# -------------------------

@dataclass
class UanModel:
    params: MlpParams
    log_std: np.ndarray
    dq_scale: float
    delta_tau_max: np.ndarray
    history: int = HISTORY_LEN

    def correction(self, histories: np.ndarray, qdot_max) -> np.ndarray:
        """Deterministic (mean) clipped correction for histories of shape (E, n, H, 2)."""
        obs = build_observation(histories, self.dq_scale, qdot_max)
        e, n = obs.shape[:2]
        mean = forward(self.params, obs.reshape(e * n, -1)).reshape(e, n)
        return self.delta_tau_max * np.clip(mean, -1.0, 1.0)

    def to_actor(self, n_joints: int) -> Actor:
        return Actor(self.params.copy(), GaussianHead(self.log_std.copy()), joint_groups=n_joints)

    @classmethod
    def from_actor(cls, actor: Actor, dq_scale: float, delta_tau_max, history: int = HISTORY_LEN) -> "UanModel":
        return cls(actor.params.copy(), actor.head.log_std.copy(), float(dq_scale), np.asarray(delta_tau_max, dtype=np.float64), history)

    def save(self, path: str, meta: Optional[Dict[str, Any]] = None) -> str:
        info = {"kind": "uan", "dq_scale": self.dq_scale, "history": self.history}
        info.update(meta or {})
        return save_checkpoint(path, self.params, GaussianHead(self.log_std), info, {"delta_tau_max": self.delta_tau_max})

    @classmethod
    def load(cls, path: str) -> "UanModel":
        params, head, meta, extra = load_checkpoint(path)
        return cls(params, head.log_std, float(meta["dq_scale"]), extra["delta_tau_max"].astype(np.float64), int(meta["history"]))


def calibrated_step(
    sim_cfg: PlantConfig,
    uan: UanModel,
    histories: np.ndarray,
    state: JointState,
    tau_cmd: np.ndarray,
    h: float,
) -> Tuple[JointState, np.ndarray, np.ndarray]:
    """
    Pure deployment step: push (error, velocity) for the current command, take
    the mean UAN correction and step the ideal sim with it.
    Returns (next state, updated histories, correction).
    """
    tau_cmd = np.asarray(tau_cmd, dtype=np.float64)
    hist = np.array(histories, dtype=np.float64, copy=True)
    dq = pd_equivalent_error(tau_cmd, state.qdot, sim_cfg.gains.kp, sim_cfg.gains.kd)
    hist[..., :-1, :] = hist[..., 1:, :]
    hist[..., -1, 0] = dq
    hist[..., -1, 1] = state.qdot
    squeeze = hist.ndim == 3
    batch = hist[None] if squeeze else hist
    delta = uan.correction(batch, sim_cfg.limits.qdot_max)
    if squeeze:
        delta = delta[0]
    nxt = step_ideal(sim_cfg.as_ideal(), state, tau_cmd, h, delta)
    return nxt, hist, delta


class UanPlant(PlantBatch):
    """The ideal sim with the trained UAN in the loop."""

    name = "uan"

    def __init__(self, cfg: PlantConfig, uan: UanModel, n_envs: int, h: float = 0.005):
        super().__init__(cfg.as_ideal(), n_envs, h)
        self.uan = uan
        self.histories = np.zeros((self.n_envs, self.n_joints, uan.history, 2))
        self.last_correction = np.zeros((self.n_envs, self.n_joints))

    def _reset_hidden(self, env_ids, rng) -> None:
        self.histories[env_ids] = 0.0
        self.last_correction[env_ids] = 0.0

    def _integrate(self, tau_cmd, extra_tau=None):
        if extra_tau is not None:
            raise ValueError("UanPlant computes its own correction")
        nxt, hist, delta = calibrated_step(self.cfg, self.uan, self.histories, self.state, tau_cmd, self.h)
        self._pending = (hist, delta)
        applied = clip_command(tau_cmd, self.state.qdot, self.cfg.limits) + delta
        return nxt, applied

    def _commit_hidden(self, keep: np.ndarray) -> None:
        hist, delta = self._pending
        self.histories[keep] = hist[keep]
        self.last_correction[keep] = delta[keep]


# -------------------------
# Training
# -------------------------

def make_uan_actor(n_joints: int, hidden: Sequence[int], history: int, init_log_std: float, rng: np.random.Generator) -> Actor:
    return Actor.create([2 * history, *hidden, 1], rng, init_log_std, joint_groups=n_joints)


def train_uan(
    cfg: WorkbenchConfig,
    dataset: TransitionDataset,
    seed: int,
    *,
    plant=None,
    updates: Optional[int] = None,
    callback=None,
) -> Tuple[UanModel, TrainResult]:
    """Train the UAN on the training split with PPO. `cfg` is the WorkbenchConfig."""
    sim_cfg = build_plant_config(cfg, reference=False)
    env_cfg = UanEnvConfig.from_workbench(cfg)
    ppo_cfg = PpoConfig.from_section(cfg.ppo_uan)
    seeds = np.random.SeedSequence(seed).spawn(3)
    env = UanEnv(dataset, sim_cfg, env_cfg, int(seeds[0].generate_state(1)[0]), plant=plant)
    rng = np.random.default_rng(seeds[1])
    actor = make_uan_actor(dataset.n_joints, cfg.nn.uan_hidden, env_cfg.history, cfg.uan.init_log_std, rng)
    critic = Critic.create([env.obs_dim, *cfg.nn.uan_hidden, 1], rng)
    result = train_ppo(
        env, actor, critic, ppo_cfg,
        updates if updates is not None else cfg.ppo_uan.updates,
        int(seeds[2].generate_state(1)[0]),
        callback=callback, log_every=cfg.ppo_uan.log_every, name="train-uan",
    )
    model = UanModel.from_actor(result.actor, env_cfg.dq_scale, env.delta_tau_max, env_cfg.history)
    return model, result
