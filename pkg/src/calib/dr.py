"""
File: src/calib/dr.py
Task: Domain-randomization baseline. The ideal simulator with per-episode
draws of PD gains, stall torque, encoder offset and a policy-lag queue.

Draws come from the random stream handed to `reset` (the owning shard's
stream under ShardedPlant), so a randomized batch is reproducible for any
thread count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..sim.actuator import ActuatorLimits, PdGains, PlantConfig
from ..sim.plants import PlantBatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DrRanges:
    kp_scale: Tuple[float, float] = (0.9, 1.1)
    kd_scale: Tuple[float, float] = (0.5, 1.5)
    stall_scale: Tuple[float, float] = (0.9, 1.1)
    encoder_offset: Tuple[float, float] = (-0.05, 0.05)
    # policy lag in 5 ms sim steps, inclusive
    lag_steps: Tuple[int, int] = (0, 6)

    def __post_init__(self):
        for name in ("kp_scale", "kd_scale", "stall_scale", "encoder_offset", "lag_steps"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"DrRanges.{name}: min {lo} > max {hi}")
        if self.lag_steps[0] < 0:
            raise ValueError("DrRanges.lag_steps must be >= 0")
        if self.kp_scale[0] <= 0 or self.stall_scale[0] <= 0 or self.kd_scale[0] < 0:
            raise ValueError("DrRanges: gain and stall multipliers must stay positive")

    @classmethod
    def from_section(cls, section: Any) -> "DrRanges":
        return cls(**{k: tuple(getattr(section, k)) for k in cls.__dataclass_fields__})

    @classmethod
    def zero_width(cls) -> "DrRanges":
        return cls((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (0, 0))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class DrPlant(PlantBatch):
    """
    Randomized ideal sim. Per env and joint: kp, kd and stall torque are
    scaled, the encoder reading is offset; per env: commands pass through a
    FIFO delay of `lag` sim steps before they reach the actuator.
    """

    name = "dr"

    def __init__(self, cfg: PlantConfig, ranges: DrRanges, n_envs: int, h: float = 0.005, seed: int = 0):
        ideal = cfg.as_ideal()
        E, n = int(n_envs), ideal.arm.n_joints
        shape = (E, n)
        self.ranges = ranges
        self.base_gains = ideal.gains
        self.base_tau_max = np.broadcast_to(ideal.limits.tau_max, (n,)).astype(np.float64)
        self.gains = PdGains(np.broadcast_to(ideal.gains.kp, shape).copy(), np.broadcast_to(ideal.gains.kd, shape).copy())
        limits = ActuatorLimits(np.tile(self.base_tau_max, (E, 1)), ideal.limits.qdot_max, ideal.limits.p_max)
        super().__init__(replace(ideal, limits=limits), E, h)
        self.offset = np.zeros(shape)
        self.lag = np.zeros(E, dtype=np.int64)
        self.max_lag = int(ranges.lag_steps[1])
        # queue[:, 0] is the newest command
        self.queue = np.zeros((E, self.max_lag + 1, n))
        self._rng = np.random.default_rng(seed)

    # --------- hooks ---------

    def encoder_offset(self) -> np.ndarray:
        return self.offset

    def pd_gains(self) -> PdGains:
        return self.gains

    def _reset_hidden(self, env_ids: np.ndarray, rng: Optional[np.random.Generator]) -> None:
        rng = rng if rng is not None else self._rng
        r, k, n = self.ranges, env_ids.size, self.n_joints
        self.gains.kp[env_ids] = np.broadcast_to(self.base_gains.kp, (n,)) * rng.uniform(*r.kp_scale, size=(k, n))
        self.gains.kd[env_ids] = np.broadcast_to(self.base_gains.kd, (n,)) * rng.uniform(*r.kd_scale, size=(k, n))
        self.cfg.limits.tau_max[env_ids] = self.base_tau_max * rng.uniform(*r.stall_scale, size=(k, n))
        self.offset[env_ids] = rng.uniform(*r.encoder_offset, size=(k, n))
        self.lag[env_ids] = rng.integers(r.lag_steps[0], r.lag_steps[1] + 1, size=k)
        self.queue[env_ids] = 0.0

    def reset(self, env_ids, q_obs, qdot, rng=None) -> None:
        super().reset(env_ids, q_obs, qdot, rng)
        if self.control_mode == "position":
            # a lagged position target starts out holding the reset pose
            ids = np.asarray(env_ids, dtype=np.int64)
            self.queue[ids] = np.asarray(q_obs, dtype=np.float64)[:, None, :]

    def _delay(self, command: np.ndarray) -> np.ndarray:
        self.queue[:, 1:] = self.queue[:, :-1]
        self.queue[:, 0] = command
        return self.queue[np.arange(self.n_envs), self.lag]

    def prime(self, env_ids: Sequence[int], tau_prefix: Sequence[np.ndarray]) -> None:
        """Fill the delay queue with the newest prefix commands (torque replays)."""
        for env, prefix in zip(np.asarray(env_ids, dtype=np.int64), tau_prefix):
            tail = np.asarray(prefix, dtype=np.float64)[::-1][: self.max_lag]
            self.queue[env, :len(tail)] = tail

    def describe(self) -> Dict[str, Any]:
        out = super().describe()
        out["ranges"] = self.ranges.to_dict()
        return out

    def sampled(self) -> Dict[str, np.ndarray]:
        """Current per-env draws, for logging and tests."""
        return {
            "kp": self.gains.kp.copy(),
            "kd": self.gains.kd.copy(),
            "tau_max": self.cfg.limits.tau_max.copy(),
            "encoder_offset": self.offset.copy(),
            "lag_steps": self.lag.copy(),
        }


def dr_wrap(cfg: PlantConfig, ranges: DrRanges, n_envs: int, h: float = 0.005, seed: int = 0) -> DrPlant:
    """A randomized instance of the ideal sim; randomization is drawn at each reset."""
    return DrPlant(cfg, ranges, n_envs, h, seed)
