"""
File: src/learn/ppo.py
Task: PPO with GAE in the variant used for actuator-net and task training:
  - actor trained on `actor_minibatches` shuffled minibatches per mini-epoch
    with a clipped surrogate, an entropy bonus and a KL-adaptive learning rate;
  - critic trained on the FULL batch once per mini-epoch at a fixed rate;
  - time-outs bootstrap through the reward (r += gamma * V(s) on time-out).

Envs follow a small vectorized protocol (see `VecEnv`). Per-env action noise
comes from per-env random streams so a rollout does not depend on how envs
are sharded across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import TrainingAbortedError
from .nn import (
    AdamWState,
    GaussianHead,
    MlpParams,
    adamw_step,
    backward,
    clip_grad_norm,
    forward,
    forward_cached,
    gaussian_entropy,
    gaussian_kl,
    gaussian_logprob,
    gaussian_logprob_grads,
    init_mlp,
    params_from_arrays,
)

logger = logging.getLogger(__name__)

LR_MIN, LR_MAX = 1.0e-6, 1.0e-2


# -------------------------
# Config
# -------------------------

@dataclass
class PpoConfig:
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

    def __post_init__(self):
        if not 0 < self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ValueError("PpoConfig requires 0 < gamma <= 1 and 0 <= lam <= 1")

    @classmethod
    def from_section(cls, section: Any) -> "PpoConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: getattr(section, k) for k in names})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# -------------------------
# Networks
# -------------------------

class Actor:
    """
    MLP mean + state-independent log_std. With `joint_groups` g > 1 one
    shared network is applied to each of g equal slices of the observation
    and produces one slice of the action; log_std is shared across slices.
    """

    def __init__(self, params: MlpParams, head: GaussianHead, joint_groups: int = 1):
        self.params = params
        self.head = head
        self.joint_groups = int(joint_groups)

    @classmethod
    def create(cls, sizes: Sequence[int], rng: np.random.Generator, init_log_std: float, joint_groups: int = 1) -> "Actor":
        params = init_mlp(sizes, rng)
        return cls(params, GaussianHead(np.full(sizes[-1], float(init_log_std))), joint_groups)

    @property
    def action_dim(self) -> int:
        return self.params.sizes[-1] * self.joint_groups

    def copy(self) -> "Actor":
        return Actor(self.params.copy(), self.head.copy(), self.joint_groups)

    def full_log_std(self) -> np.ndarray:
        return np.tile(self.head.log_std, self.joint_groups)

    def full_head(self) -> GaussianHead:
        return GaussianHead(self.full_log_std())

    def _split(self, obs: np.ndarray) -> np.ndarray:
        b = obs.shape[0]
        return obs.reshape(b * self.joint_groups, -1)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        out = forward(self.params, self._split(obs))
        return out.reshape(obs.shape[0], -1)

    def mean_cached(self, obs: np.ndarray):
        x = self._split(obs)
        out, cache = forward_cached(self.params, x)
        return out.reshape(obs.shape[0], -1), (x, cache)

    def grads(self, cached, grad_mean: np.ndarray, grad_log_std: np.ndarray) -> List[np.ndarray]:
        x, cache = cached
        g, _ = backward(self.params, x, grad_mean.reshape(x.shape[0], -1), cache)
        gls = grad_log_std.reshape(self.joint_groups, -1).sum(axis=0)
        return g.arrays() + [gls]

    def arrays(self) -> List[np.ndarray]:
        return self.params.arrays() + [self.head.log_std]

    def set_arrays(self, arrays: List[np.ndarray]) -> None:
        self.params = params_from_arrays(self.params, arrays[:-1])
        self.head = GaussianHead(arrays[-1])

    def act(self, obs: np.ndarray, noise: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(action, log-prob, mean); `noise` None means deterministic mean action."""
        mu = self.mean(obs)
        if noise is None:
            return mu, gaussian_logprob(self.full_head(), mu, mu), mu
        a = mu + np.exp(self.full_log_std()) * noise
        return a, gaussian_logprob(self.full_head(), mu, a), mu


class Critic:
    def __init__(self, params: MlpParams):
        self.params = params

    @classmethod
    def create(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Critic":
        return cls(init_mlp(sizes, rng, out_gain=1.0))

    def copy(self) -> "Critic":
        return Critic(self.params.copy())

    def value(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.params, obs)[:, 0]


# -------------------------
# Rollouts
# -------------------------

class VecEnv(Protocol):
    n_envs: int
    obs_dim: int
    action_dim: int

    def reset_all(self) -> np.ndarray: ...

    def step(self, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Dict[str, Any]]: ...


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    logprobs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    action_mean: np.ndarray
    log_std: np.ndarray
    last_values: np.ndarray
    timeouts: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    info: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def empty(cls, horizon: int, n_envs: int, obs_dim: int, action_dim: int) -> "RolloutBuffer":
        T, E = horizon, n_envs
        return cls(
            obs=np.zeros((T, E, obs_dim)),
            actions=np.zeros((T, E, action_dim)),
            logprobs=np.zeros((T, E)),
            rewards=np.zeros((T, E)),
            values=np.zeros((T, E)),
            dones=np.zeros((T, E), dtype=bool),
            action_mean=np.zeros((T, E, action_dim)),
            log_std=np.zeros(action_dim),
            last_values=np.zeros(E),
            timeouts=np.zeros((T, E), dtype=bool),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        """(env_count, horizon)."""
        return int(self.rewards.shape[1]), int(self.rewards.shape[0])


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Standard GAE; a done at step t cuts both the bootstrap and the trace."""
    T = buffer.rewards.shape[0]
    adv = np.zeros_like(buffer.rewards)
    nxt_adv = np.zeros_like(buffer.last_values)
    nxt_val = buffer.last_values
    for t in reversed(range(T)):
        live = 1.0 - buffer.dones[t].astype(np.float64)
        delta = buffer.rewards[t] + gamma * live * nxt_val - buffer.values[t]
        nxt_adv = delta + gamma * lam * live * nxt_adv
        adv[t] = nxt_adv
        nxt_val = buffer.values[t]
    returns = adv + buffer.values
    buffer.advantages, buffer.returns = adv, returns
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


def collect_rollouts(
    env: VecEnv,
    actor: Actor,
    critic: Critic,
    horizon: int,
    env_rngs: Sequence[np.random.Generator],
    obs: np.ndarray,
    gamma: float,
    critic_obs_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[RolloutBuffer, np.ndarray]:
    """
    Step every env `horizon` times. Returns the buffer and the observation to
    continue from. Diverged envs are reset by the env and flagged done.
    """
    E = env.n_envs
    A = actor.action_dim
    cobs = critic_obs_fn or (lambda o: o)
    noise = np.stack([r.standard_normal((horizon, A)) for r in env_rngs], axis=1)
    buf = RolloutBuffer.empty(horizon, E, obs.shape[1], A)
    buf.log_std = actor.full_log_std().copy()
    term_sums: Dict[str, float] = {}
    ep_returns: List[float] = []
    for t in range(horizon):
        action, logp, mu = actor.act(obs, noise[t])
        value = critic.value(cobs(obs))
        nxt, reward, done, info = env.step(action)
        timeout = np.asarray(info.get("timeouts", np.zeros(E, dtype=bool)))
        r = reward + gamma * value * timeout
        buf.obs[t], buf.actions[t], buf.logprobs[t] = obs, action, logp
        buf.action_mean[t], buf.values[t], buf.rewards[t] = mu, value, r
        buf.dones[t], buf.timeouts[t] = done, timeout
        for k, v in (info.get("reward_terms") or {}).items():
            term_sums[k] = term_sums.get(k, 0.0) + float(np.mean(v))
        ep_returns.extend(info.get("episode_returns", []))
        obs = nxt
    buf.last_values = critic.value(cobs(obs))
    buf.info = {
        "mean_reward": float(buf.rewards.mean()),
        "reward_terms": {k: v / horizon for k, v in term_sums.items()},
        "episode_returns": ep_returns,
    }
    return buf, obs


# -------------------------
# Update
# -------------------------

@dataclass
class OptimizerStates:
    actor: AdamWState
    critic: AdamWState

    @classmethod
    def create(cls, actor: Actor, critic: Critic, cfg: PpoConfig) -> "OptimizerStates":
        return cls(
            AdamWState.for_arrays(actor.arrays(), cfg.actor_lr, cfg.weight_decay),
            AdamWState.for_arrays(critic.params.arrays(), cfg.critic_lr, cfg.weight_decay),
        )


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float) -> Tuple[float, np.ndarray]:
    """Loss -mean(min(r A, clip(r) A)) and its gradient w.r.t. each new log-prob."""
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    active = (ratio * adv <= clipped * adv).astype(np.float64)
    return float(-surr.mean()), -(active * adv * ratio) / ratio.size


def _abort(message: str, **diag) -> None:
    raise TrainingAbortedError(message, payload={k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in diag.items()})


def ppo_update(
    actor: Actor,
    critic: Critic,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    opt: OptimizerStates,
    rng: np.random.Generator,
    critic_obs_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Dict[str, float]:
    """
    In-place update of actor/critic parameters from one rollout. The critic
    never sees actor minibatches and the actor loop never touches critic arrays.
    """
    if buffer.advantages is None:
        compute_gae(buffer, cfg.gamma, cfg.lam)
    T, E = buffer.rewards.shape
    N = T * E
    obs = buffer.obs.reshape(N, -1)
    actions = buffer.actions.reshape(N, -1)
    old_logp = buffer.logprobs.reshape(N)
    old_mean = buffer.action_mean.reshape(N, -1)
    old_log_std = buffer.log_std
    adv = normalize_advantages(buffer.advantages.reshape(N))
    returns = buffer.returns.reshape(N)
    cobs = (critic_obs_fn or (lambda o: o))(obs)

    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "kl": 0.0, "clip_frac": 0.0, "entropy": 0.0}
    n_actor = 0
    mb = max(1, N // cfg.actor_minibatches)
    for epoch in range(cfg.mini_epochs):
        perm = rng.permutation(N)
        for k in range(cfg.actor_minibatches):
            idx = perm[k * mb:(k + 1) * mb] if k < cfg.actor_minibatches - 1 else perm[k * mb:]
            mu, cached = actor.mean_cached(obs[idx])
            head = actor.full_head()
            logp = gaussian_logprob(head, mu, actions[idx])
            ratio = np.exp(logp - old_logp[idx])
            surr_loss, dlogp = clipped_surrogate(ratio, adv[idx], cfg.clip)
            loss = surr_loss - cfg.entropy_coef * gaussian_entropy(head)
            if not np.isfinite(loss):
                _abort("Non-finite actor loss.", epoch=epoch, minibatch=k, max_ratio=float(np.nanmax(ratio)))

            g_mean, g_ls = gaussian_logprob_grads(head, mu, actions[idx])
            grad_mean = dlogp[:, None] * g_mean
            grad_ls = (dlogp[:, None] * g_ls).sum(axis=0) - cfg.entropy_coef
            grads, _ = clip_grad_norm(actor.grads(cached, grad_mean, grad_ls), cfg.max_grad_norm)
            actor.set_arrays(adamw_step(opt.actor, actor.arrays(), grads))

            kl = float(np.mean(gaussian_kl(actor.mean(obs[idx]), actor.full_log_std(), old_mean[idx], old_log_std)))
            if not np.isfinite(kl):
                _abort("Non-finite KL.", epoch=epoch, minibatch=k)
            if kl > 2.0 * cfg.kl_threshold:
                opt.actor.lr = max(LR_MIN, opt.actor.lr * 0.5)
            elif kl < 0.5 * cfg.kl_threshold:
                opt.actor.lr = min(LR_MAX, opt.actor.lr * 1.5)

            stats["actor_loss"] += float(loss)
            stats["kl"] += kl
            stats["clip_frac"] += float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
            n_actor += 1

        v, vcache = forward_cached(critic.params, cobs)
        err = v[:, 0] - returns
        vloss = float(np.mean(err * err))
        if not np.isfinite(vloss):
            _abort("Non-finite value loss.", epoch=epoch)
        g, _ = backward(critic.params, cobs, (2.0 * err / N)[:, None], vcache)
        cgrads, _ = clip_grad_norm(g.arrays(), cfg.max_grad_norm)
        critic.params = params_from_arrays(critic.params, adamw_step(opt.critic, critic.params.arrays(), cgrads))
        stats["critic_loss"] += vloss

    stats["actor_loss"] /= max(1, n_actor)
    stats["kl"] /= max(1, n_actor)
    stats["clip_frac"] /= max(1, n_actor)
    stats["critic_loss"] /= cfg.mini_epochs
    stats["entropy"] = gaussian_entropy(actor.full_head())
    stats["actor_lr"] = float(opt.actor.lr)
    if not (actor.params.all_finite() and critic.params.all_finite() and np.all(np.isfinite(actor.head.log_std))):
        _abort("Parameters became non-finite.", actor_lr=opt.actor.lr)
    return stats


# -------------------------
# Training loop
# -------------------------

@dataclass
class TrainResult:
    actor: Actor
    critic: Critic
    metrics: pd.DataFrame
    updates_done: int


def train_ppo(
    env: VecEnv,
    actor: Actor,
    critic: Critic,
    cfg: PpoConfig,
    updates: int,
    seed: int,
    *,
    callback: Optional[Callable[[int, Dict[str, Any], Actor, Critic], None]] = None,
    critic_obs_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    log_every: int = 10,
    name: str = "ppo",
) -> TrainResult:
    """
    Run `updates` PPO iterations. On a TrainingAbortedError the payload is
    extended with the last-good update index and the last-good networks are
    attached to the exception as `exc.last_good`.
    """
    seeds = np.random.SeedSequence(seed).spawn(env.n_envs + 1)
    env_rngs = [np.random.default_rng(s) for s in seeds[:-1]]
    update_rng = np.random.default_rng(seeds[-1])
    opt = OptimizerStates.create(actor, critic, cfg)
    rows: List[Dict[str, Any]] = []
    obs = env.reset_all()
    last_good = (actor.copy(), critic.copy(), 0)

    for u in range(updates):
        try:
            buf, obs = collect_rollouts(env, actor, critic, cfg.horizon, env_rngs, obs, cfg.gamma, critic_obs_fn)
            compute_gae(buf, cfg.gamma, cfg.lam)
            stats = ppo_update(actor, critic, buf, cfg, opt, update_rng, critic_obs_fn)
            row: Dict[str, Any] = {"update": u, "mean_reward": buf.info["mean_reward"]}
            row.update(stats)
            returns = buf.info["episode_returns"]
            row["episode_return"] = float(np.mean(returns)) if returns else float("nan")
            for k, v in buf.info["reward_terms"].items():
                row[f"r_{k}"] = v
            rows.append(row)
            if callback is not None:
                callback(u, row, actor, critic)
        except TrainingAbortedError as e:
            e.payload.update({"update": u, "last_good_update": last_good[2], "stage": name})
            e.last_good = last_good
            logger.error("%s aborted at update %d: %s", name, u, e)
            raise
        last_good = (actor.copy(), critic.copy(), u + 1)
        if log_every and (u % log_every == 0 or u == updates - 1):
            logger.info(
                "%s update %d/%d reward=%.4f kl=%.5f lr=%.2e vloss=%.4f",
                name, u + 1, updates, row["mean_reward"], row["kl"], row["actor_lr"], row["critic_loss"],
            )
    return TrainResult(actor, critic, pd.DataFrame(rows), updates)


def write_metrics(metrics: pd.DataFrame, path: str) -> str:
    metrics.to_csv(path, index=False, float_format="%.17g")
    return path
