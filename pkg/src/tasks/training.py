"""
File: src/tasks/training.py
Task: Build task plants for every sim variant, pre-train the tracking policy
and fine-tune it on the throw task.

Variants (all position-mode, sharded):
- default: ideal sim
- dr:      ideal sim with randomized gains, stall torque, encoder offset, lag
- cem:     ideal sim with CEM-fitted friction / damping / armature
- actnet:  ideal sim driven by the supervised actuator net
- uan:     ideal sim with the UAN correction in the loop
- reference: the synthetic hardware stand-in, used only for evaluation

Fine-tune modes:
- finetune:    from the pre-trained policy, small actor lr, entropy 0, log-std kept
- no-pretrain: fresh policy trained on the throw task with pre-training settings
- no-e2e:      frozen pre-trained policy, a learned head edits its reference input
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from ..calib.actnet import ActNetModel, ActNetPlant
from ..calib.dr import DrPlant, DrRanges
from ..calib.uan import UanModel, UanPlant
from ..config import WorkbenchConfig, build_arm, build_plant_config
from ..errors import ConfigError, TrainingAbortedError
from ..learn.checkpoints import load_checkpoint, save_checkpoint
from ..learn.ppo import Actor, Critic, PpoConfig, TrainResult, train_ppo
from ..sim.parallel import ShardPool, ShardedPlant
from ..sim.plants import CemPlant, IdealPlant, ReferencePlant
from .envs import CommandHeadEnv, TaskEnvConfig, ThrowEnv, TrackingEnv
from .reference import ReferenceTrajectory, make_reference_throw

logger = logging.getLogger(__name__)

VARIANTS = ("default", "dr", "cem", "actnet", "uan")
FINETUNE_MODES = ("finetune", "no-pretrain", "no-e2e")


# -------------------------
# Plants
# -------------------------

@dataclass
class CalibrationArtifacts:
    """Whatever the calibration stages produced; only what a variant needs must be set."""

    uan: Optional[UanModel] = None
    cem_params: Optional[Dict[str, np.ndarray]] = None
    actnet: Optional[ActNetModel] = None


def plant_factory(
    cfg: WorkbenchConfig,
    variant: str,
    artifacts: Optional[CalibrationArtifacts] = None,
    control_mode: str = "position",
) -> Callable[[int], Any]:
    """`factory(n)` building one shard of the given variant."""
    artifacts = artifacts or CalibrationArtifacts()
    h = cfg.timestep
    if variant == "reference":
        ref = build_plant_config(cfg, reference=True, control_mode=control_mode)
        return lambda n: ReferencePlant(ref, n, h)

    sim = build_plant_config(cfg, reference=False, control_mode=control_mode)
    if variant == "default":
        return lambda n: IdealPlant(sim, n, h)
    if variant == "dr":
        ranges = DrRanges.from_section(cfg.dr)
        return lambda n: DrPlant(sim, ranges, n, h)
    if variant == "cem":
        if artifacts.cem_params is None:
            raise ConfigError("The cem variant needs fitted parameters.", payload={"variant": variant})
        return lambda n: CemPlant(sim, artifacts.cem_params, n, h)
    if variant == "actnet":
        if artifacts.actnet is None:
            raise ConfigError("The actnet variant needs a trained actuator net.", payload={"variant": variant})
        return lambda n: ActNetPlant(sim, artifacts.actnet, n, h)
    if variant == "uan":
        if artifacts.uan is None:
            raise ConfigError("The uan variant needs a trained UAN.", payload={"variant": variant})
        return lambda n: UanPlant(sim, artifacts.uan, n, h)
    raise ConfigError(f"Unknown sim variant '{variant}'.", payload={"variant": variant, "known": list(VARIANTS) + ["reference"]})


def make_plant(
    cfg: WorkbenchConfig,
    variant: str,
    n_envs: int,
    seed: int,
    *,
    artifacts: Optional[CalibrationArtifacts] = None,
    pool: Optional[ShardPool] = None,
    control_mode: str = "position",
) -> ShardedPlant:
    factory = plant_factory(cfg, variant, artifacts, control_mode)
    return ShardedPlant(factory, n_envs, min(cfg.n_shards, n_envs), seed, pool=pool)


def build_reference(cfg: WorkbenchConfig) -> ReferenceTrajectory:
    t = cfg.task
    return make_reference_throw(
        build_arm(cfg), t.rest_pose, t.cocked_pose, t.release_pose,
        setup_s=t.setup_s, throw_s=t.throw_s, swing_s=t.swing_s,
        settle_s=t.episode_s - t.setup_s - t.throw_s, h=cfg.timestep,
    )


def make_throw_env(cfg: WorkbenchConfig, plant, seed: int, *, train: bool = True) -> ThrowEnv:
    """Evaluation envs (`train=False`) always start in set-up and never retain the throw phase."""
    env_cfg = TaskEnvConfig.from_workbench(cfg, plant.n_envs)
    if not train:
        env_cfg.retain_throw_p = 0.0
        env_cfg.settle_on_reset_p = 0.0
    return ThrowEnv(plant, build_arm(cfg), env_cfg, build_reference(cfg), seed)


def make_tracking_env(cfg: WorkbenchConfig, plant, seed: int) -> TrackingEnv:
    return TrackingEnv(plant, build_arm(cfg), TaskEnvConfig.from_workbench(cfg, plant.n_envs), seed)


# -------------------------
# Policies
# -------------------------

@dataclass
class TaskPolicy:
    """
    `actor` acts on the task observation. In command-head form (no-e2e) the
    actor is the head and `frozen` the pre-trained joint policy it drives.
    """

    actor: Actor
    critic: Critic
    mode: str = "direct"
    frozen: Optional[Actor] = None
    head_scale: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)

    def wrap(self, env):
        if self.mode == "command-head":
            return CommandHeadEnv(env, self.frozen, self.head_scale)
        return env

    def save(self, directory: str, meta: Optional[Dict[str, Any]] = None) -> str:
        """One checkpoint per network under `directory`; policy meta rides on actor.npz."""
        os.makedirs(directory, exist_ok=True)
        info = {"kind": "task-policy", "mode": self.mode, "head_scale": self.head_scale}
        info.update(self.meta)
        info.update(meta or {})
        save_checkpoint(os.path.join(directory, "actor.npz"), self.actor.params, self.actor.head, info)
        save_checkpoint(os.path.join(directory, "critic.npz"), self.critic.params, None, {"kind": "critic"})
        if self.frozen is not None:
            save_checkpoint(os.path.join(directory, "frozen.npz"), self.frozen.params, self.frozen.head, {"kind": "frozen-policy"})
        return directory

    @classmethod
    def load(cls, directory: str) -> "TaskPolicy":
        params, head, meta, _ = load_checkpoint(os.path.join(directory, "actor.npz"))
        critic_params, _, _, _ = load_checkpoint(os.path.join(directory, "critic.npz"))
        frozen = None
        if meta.get("mode") == "command-head":
            f_params, f_head, _, _ = load_checkpoint(os.path.join(directory, "frozen.npz"))
            frozen = Actor(f_params, f_head)
        return cls(Actor(params, head), Critic(critic_params), meta.get("mode", "direct"), frozen, float(meta.get("head_scale", 0.0)), meta)


def make_policy(cfg: WorkbenchConfig, obs_dim: int, action_dim: int, rng: np.random.Generator) -> TaskPolicy:
    actor = Actor.create([obs_dim, *cfg.nn.policy_hidden, action_dim], rng, cfg.nn.policy_init_log_std)
    critic = Critic.create([obs_dim, *cfg.nn.value_hidden, 1], rng)
    return TaskPolicy(actor, critic)


# -------------------------
# Collapse detection
# -------------------------

class CollapseDetector:
    """
    Aborts fine-tuning once the mean reward has stayed more than `frac` below
    the baseline (the untouched policy's rollout reward at update 0) for
    `window` consecutive updates.
    """

    def __init__(self, frac: float = 0.5, window: int = 50, baseline: Optional[float] = None):
        self.frac = float(frac)
        self.window = int(window)
        self.baseline = baseline
        self.run = 0

    def threshold(self) -> float:
        return self.baseline - self.frac * abs(self.baseline)

    def __call__(self, update: int, row: Dict[str, Any], actor: Actor, critic: Critic) -> None:
        reward = float(row["mean_reward"])
        if self.baseline is None:
            self.baseline = reward
            return
        self.run = self.run + 1 if reward < self.threshold() else 0
        if self.run >= self.window:
            raise TrainingAbortedError(
                "Fine-tuning collapsed: reward stayed below the tracking-only baseline.",
                payload={"baseline": self.baseline, "threshold": self.threshold(), "reward": reward, "consecutive": self.run},
            )


# -------------------------
# Stages
# -------------------------

def _seeds(seed: int, k: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def pretrain(
    cfg: WorkbenchConfig,
    seed: int,
    *,
    updates: Optional[int] = None,
    pool: Optional[ShardPool] = None,
) -> Tuple[TaskPolicy, TrainResult]:
    """Tracking pre-training on the default sim with the task embedding zeroed."""
    plant_seed, env_seed, init_seed, ppo_seed = _seeds(seed, 4)
    p = cfg.ppo_pretrain
    plant = make_plant(cfg, "default", p.n_envs, plant_seed, pool=pool)
    env = make_tracking_env(cfg, plant, env_seed)
    policy = make_policy(cfg, env.obs_dim, env.action_dim, np.random.default_rng(init_seed))
    result = train_ppo(
        env, policy.actor, policy.critic, PpoConfig.from_section(p),
        updates if updates is not None else p.updates, ppo_seed,
        log_every=p.log_every, name="pretrain",
    )
    policy.actor, policy.critic = result.actor, result.critic
    policy.meta = {"stage": "pretrain", "variant": "default"}
    return policy, result


def finetune(
    cfg: WorkbenchConfig,
    pretrained: Optional[TaskPolicy],
    variant: str,
    seed: int,
    *,
    mode: str = "finetune",
    artifacts: Optional[CalibrationArtifacts] = None,
    updates: Optional[int] = None,
    pool: Optional[ShardPool] = None,
) -> Tuple[TaskPolicy, TrainResult]:
    """
    Throw-task training in the chosen sim variant. Actor and critic are copied,
    so the pre-trained policy is never modified.
    """
    if mode not in FINETUNE_MODES:
        raise ConfigError(f"Unknown fine-tune mode '{mode}'.", payload={"mode": mode, "known": list(FINETUNE_MODES)})
    if mode != "no-pretrain" and pretrained is None:
        raise ConfigError("Fine-tuning needs a pre-trained policy.", payload={"mode": mode})
    plant_seed, env_seed, init_seed, ppo_seed = _seeds(seed, 4)
    section = cfg.ppo_finetune if mode == "finetune" else cfg.ppo_pretrain
    plant = make_plant(cfg, variant, section.n_envs, plant_seed, artifacts=artifacts, pool=pool)
    env = make_throw_env(cfg, plant, env_seed)
    rng = np.random.default_rng(init_seed)

    if mode == "finetune":
        policy = TaskPolicy(pretrained.actor.copy(), pretrained.critic.copy())
    elif mode == "no-pretrain":
        policy = make_policy(cfg, env.obs_dim, env.action_dim, rng)
    else:
        head = make_policy(cfg, env.obs_dim, env.action_dim, rng)
        policy = TaskPolicy(head.actor, head.critic, "command-head", pretrained.actor.copy(), cfg.task.command_head_scale)

    detector = CollapseDetector(cfg.task.collapse_frac, cfg.task.collapse_window) if mode == "finetune" else None
    logger.info("finetune: variant=%s mode=%s envs=%d", variant, mode, env.n_envs)
    result = train_ppo(
        policy.wrap(env), policy.actor, policy.critic, PpoConfig.from_section(section),
        updates if updates is not None else section.updates, ppo_seed,
        callback=detector, log_every=section.log_every, name=f"finetune-{variant}-{mode}",
    )
    policy.actor, policy.critic = result.actor, result.critic
    policy.meta = {"stage": "finetune", "variant": variant, "finetune_mode": mode}
    return policy, result
