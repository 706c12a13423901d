"""
File: src/evaluation/metrics.py
Task: Measurement suite over the sim variants.

- rollout_mse: free-run replay MSE per data regime (square+sine, gaussian, throw)
- one_step_mse: the same windows, teacher-forced (state reset to the recording every step)
- throw_transfer_gap: a throw policy's distance in its training sim vs on the reference plant

Every variant sees the identical windows and episode seeds. MSE is the mean
over joints and steps of (q_sim - q_real)^2, in rad^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config import WorkbenchConfig
from ..data.datagen import REGIMES, TransitionDataset
from ..errors import WorkbenchError
from ..sim.parallel import ShardPool, ShardedPlant
from ..tasks.training import VARIANTS, CalibrationArtifacts, TaskPolicy, make_throw_env, plant_factory
from .replay import Window, replay_windows, tile_windows

logger = logging.getLogger(__name__)

VARIANT_ORDER = ("reference",) + VARIANTS


# -------------------------
# Replay MSE
# -------------------------

def regime_windows(cfg: WorkbenchConfig, dataset: TransitionDataset, window_s: Optional[float] = None) -> Dict[str, List[Window]]:
    window_s = cfg.eval.window_s if window_s is None else window_s
    out = {}
    for regime, tags in REGIMES.items():
        if dataset.session_ids(tags):
            out[regime] = tile_windows(dataset, tags, window_s, cfg.eval.overlap)
    return out


def _replay(cfg, variant, dataset, windows, artifacts, seed, teacher_forcing, pool):
    factory = plant_factory(cfg, variant, artifacts, control_mode="torque")
    E = len(windows)
    plant = ShardedPlant(factory, E, min(cfg.n_shards, E), seed, pool=pool)
    return replay_windows(None, dataset, windows, plant=plant, teacher_forcing=teacher_forcing)


def _summarize(variant: str, regime: str, mse: np.ndarray, diverged: np.ndarray) -> Dict[str, Any]:
    ok = mse[~diverged]
    return {
        "variant": variant,
        "regime": regime,
        "mse_mean": float(np.mean(ok)) if ok.size else float("nan"),
        "mse_std": float(np.std(ok)) if ok.size else float("nan"),
        "n_windows": int(mse.size),
        "n_diverged": int(diverged.sum()),
    }


def rollout_mse(
    cfg: WorkbenchConfig,
    variant: str,
    dataset: TransitionDataset,
    *,
    artifacts: Optional[CalibrationArtifacts] = None,
    window_s: Optional[float] = None,
    teacher_forcing: bool = False,
    seed: int = 0,
    pool: Optional[ShardPool] = None,
) -> pd.DataFrame:
    """
    One row per regime present in `dataset`. Diverged windows are counted in
    n_diverged and left out of the mean. The dr variant is averaged over
    `dr.eval_instances` randomization draws, one plant seed per draw.
    """
    windows = regime_windows(cfg, dataset, window_s)
    draws = cfg.dr.eval_instances if variant == "dr" else 1
    rows = []
    for regime, wins in windows.items():
        mses, divs = [], []
        for k in range(draws):
            res = _replay(cfg, variant, dataset, wins, artifacts, seed + k, teacher_forcing, pool)
            mses.append(res.mse)
            divs.append(res.diverged)
        mse = np.concatenate(mses)
        diverged = np.concatenate(divs)
        rows.append(_summarize(variant, regime, np.where(diverged, np.nan, mse), diverged))
        logger.info(
            "%s %s/%s: mse=%.3e over %d windows (%d diverged)",
            "one-step" if teacher_forcing else "rollout", variant, regime,
            rows[-1]["mse_mean"], rows[-1]["n_windows"], rows[-1]["n_diverged"],
        )
    return pd.DataFrame(rows)


def one_step_mse(cfg: WorkbenchConfig, variant: str, dataset: TransitionDataset, **kwargs) -> pd.DataFrame:
    return rollout_mse(cfg, variant, dataset, teacher_forcing=True, **kwargs)


# -------------------------
# Throw transfer
# -------------------------

@dataclass
class ThrowOutcome:
    records: pd.DataFrame

    @property
    def distance(self) -> float:
        return float(self.records["distance"].mean())

    @property
    def release_speed(self) -> float:
        return float(self.records["release_speed"].mean())

    @property
    def n_dropped(self) -> int:
        return int(self.records["dropped"].sum())

    @property
    def n_diverged(self) -> int:
        return int(self.records["diverged"].sum())


def run_throw_episodes(
    cfg: WorkbenchConfig,
    policy: TaskPolicy,
    variant: str,
    n_episodes: int,
    seed: int,
    *,
    artifacts: Optional[CalibrationArtifacts] = None,
    pool: Optional[ShardPool] = None,
) -> ThrowOutcome:
    """
    One deterministic (mean-action) throw episode per env, each starting in
    set-up. Plant and env seeds depend only on `seed`, so different variants
    see the same episode draws.
    """
    factory = plant_factory(cfg, variant, artifacts)
    plant = ShardedPlant(factory, n_episodes, min(cfg.n_shards, n_episodes), seed, pool=pool)
    env = policy.wrap(make_throw_env(cfg, plant, seed, train=False))
    obs = env.reset_all()
    first: Dict[int, Dict[str, Any]] = {}
    max_steps = int(np.ceil(cfg.task.episode_s / cfg.task.policy_dt)) + 1
    for _ in range(max_steps):
        obs, _, _, info = env.step(policy.actor.mean(obs))
        for rec in info["episode_records"]:
            first.setdefault(rec["env"], rec)
        if len(first) == n_episodes:
            break
    if len(first) < n_episodes:
        raise WorkbenchError("Throw evaluation did not finish every episode.", payload={"finished": len(first), "expected": n_episodes})
    records = pd.DataFrame([first[e] for e in range(n_episodes)])
    records.insert(0, "plant", variant)
    return ThrowOutcome(records)


@dataclass
class TransferGap:
    variant: str
    d_sim: float
    d_ref: float
    speed_sim: float
    speed_ref: float
    sim: ThrowOutcome
    ref: ThrowOutcome

    @property
    def gap(self) -> float:
        return abs(self.d_sim - self.d_ref)

    def row(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "d_sim": self.d_sim,
            "d_ref": self.d_ref,
            "gap": self.gap,
            "release_speed_sim": self.speed_sim,
            "release_speed_ref": self.speed_ref,
            "dropped_sim": self.sim.n_dropped,
            "dropped_ref": self.ref.n_dropped,
            "diverged_sim": self.sim.n_diverged,
            "diverged_ref": self.ref.n_diverged,
        }


def throw_transfer_gap(
    cfg: WorkbenchConfig,
    policy: TaskPolicy,
    variant: str,
    *,
    n_episodes: Optional[int] = None,
    seed: int = 0,
    artifacts: Optional[CalibrationArtifacts] = None,
    pool: Optional[ShardPool] = None,
) -> TransferGap:
    n = cfg.eval.n_episodes if n_episodes is None else n_episodes
    sim = run_throw_episodes(cfg, policy, variant, n, seed, artifacts=artifacts, pool=pool)
    ref = run_throw_episodes(cfg, policy, "reference", n, seed, pool=pool)
    out = TransferGap(variant, sim.distance, ref.distance, sim.release_speed, ref.release_speed, sim, ref)
    logger.info("throw %s: sim=%.3f m ref=%.3f m gap=%.3f m", variant, out.d_sim, out.d_ref, out.gap)
    return out


def mse_table(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Stack per-variant frames in a fixed (variant, regime) order."""
    columns = ["variant", "regime", "mse_mean", "mse_std", "n_windows", "n_diverged"]
    if not frames:
        return pd.DataFrame(columns=columns)
    table = pd.concat(list(frames), ignore_index=True)
    variants = {v: i for i, v in enumerate(VARIANT_ORDER)}
    regimes = {r: i for i, r in enumerate(REGIMES)}
    table["_v"] = table["variant"].map(lambda v: variants.get(v, len(variants)))
    table["_r"] = table["regime"].map(lambda r: regimes.get(r, len(regimes)))
    table = table.sort_values(["_v", "variant", "_r"], kind="stable").drop(columns=["_v", "_r"])
    extra = [c for c in table.columns if c not in columns]
    return table.reset_index(drop=True)[columns + extra]
