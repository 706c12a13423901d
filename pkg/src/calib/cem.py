"""
File: src/calib/cem.py
Task: Cross-entropy-method system identification baseline.

`cem_optimize` is a generic bounded Gaussian CEM over a batched objective.
`cem_fit` uses it to fit per-joint coulomb friction, viscous damping and
armature to the training recordings: each candidate augments the ideal sim
(CemPlant) and is scored by the free-run position MSE over a fixed, seeded
set of training windows. One iteration evaluates population x windows as a
single plant batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data.datagen import TRAIN_TAGS, TransitionDataset
from ..errors import DivergenceError
from ..evaluation.replay import Window, replay_windows, sample_windows
from ..sim.actuator import PlantConfig
from ..sim.parallel import ShardPool, ShardedPlant, shard_bounds
from ..sim.plants import CemPlant

logger = logging.getLogger(__name__)

PARAM_NAMES = ("coulomb", "visc", "armature")


@dataclass
class CemConfig:
    population: int = 64
    elite_frac: float = 0.25
    iterations: int = 50
    n_windows: int = 16
    window_s: float = 4.0
    coulomb_bounds: Tuple[float, float] = (0.0, 5.0)
    visc_bounds: Tuple[float, float] = (0.0, 2.0)
    armature_bounds: Tuple[float, float] = (0.0, 0.3)
    min_std_frac: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.elite_frac < 1.0:
            raise ValueError("CemConfig.elite_frac must lie in (0, 1)")
        if self.population < 8:
            raise ValueError("CemConfig.population must be >= 8")
        for name in ("coulomb_bounds", "visc_bounds", "armature_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"CemConfig.{name}: need finite lo <= hi")

    @classmethod
    def from_section(cls, section: Any) -> "CemConfig":
        return cls(**{k: getattr(section, k) for k in cls.__dataclass_fields__})

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.elite_frac * self.population)))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class CemResult:
    best_x: np.ndarray
    best_score: float
    mean: np.ndarray
    std: np.ndarray
    trace: pd.DataFrame


def cem_optimize(
    objective: Callable[[np.ndarray], np.ndarray],
    lower: np.ndarray,
    upper: np.ndarray,
    cfg: CemConfig,
    rng: np.random.Generator,
    *,
    mean: Optional[np.ndarray] = None,
    std: Optional[np.ndarray] = None,
    name: str = "cem",
) -> CemResult:
    """
    Minimize `objective(population (P, D)) -> scores (P,)`. Samples are
    clamped to [lower, upper]; non-finite scores rank last. The std never
    falls below min_std_frac of the bound width. The best-ever sample is
    returned, so the best score in the trace never increases.
    """
    lower, upper = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
    width = upper - lower
    mean = (lower + upper) / 2.0 if mean is None else np.asarray(mean, dtype=np.float64).copy()
    std = width / 4.0 if std is None else np.asarray(std, dtype=np.float64).copy()
    floor = cfg.min_std_frac * width
    best_x, best = mean.copy(), np.inf
    rows: List[Dict[str, Any]] = []

    for it in range(cfg.iterations):
        pop = np.clip(mean + std * rng.standard_normal((cfg.population, mean.size)), lower, upper)
        scores = np.asarray(objective(pop), dtype=np.float64)
        finite = np.isfinite(scores)
        if not np.any(finite):
            raise DivergenceError(
                "Every CEM candidate diverged.",
                payload={"stage": name, "iteration": it, "mean": mean.tolist(), "std": std.tolist()},
            )
        ranked = np.argsort(np.where(finite, scores, np.inf), kind="stable")
        elite = pop[ranked[: cfg.n_elite]]
        elite_scores = scores[ranked[: cfg.n_elite]]
        if scores[ranked[0]] < best:
            best, best_x = float(scores[ranked[0]]), pop[ranked[0]].copy()
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), floor)
        rows.append({
            "iteration": it,
            "elite_mean": float(np.mean(elite_scores)),
            "best": best,
            "n_diverged": int((~finite).sum()),
            "std_mean": float(std.mean()),
        })
        logger.debug("%s iteration %d best=%.6g elite=%.6g", name, it, best, rows[-1]["elite_mean"])
    return CemResult(best_x, best, mean, std, pd.DataFrame(rows))


# --------- actuator-parameter fit ---------

def unpack_params(x: np.ndarray, n_joints: int) -> Dict[str, np.ndarray]:
    """(..., 3n) -> {"coulomb": (..., n), "visc": (..., n), "armature": (..., n)}."""
    x = np.asarray(x, dtype=np.float64)
    return {name: x[..., k * n_joints:(k + 1) * n_joints] for k, name in enumerate(PARAM_NAMES)}


def param_bounds(cfg: CemConfig, n_joints: int) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.repeat([cfg.coulomb_bounds[0], cfg.visc_bounds[0], cfg.armature_bounds[0]], n_joints)
    hi = np.repeat([cfg.coulomb_bounds[1], cfg.visc_bounds[1], cfg.armature_bounds[1]], n_joints)
    return lo.astype(np.float64), hi.astype(np.float64)


def replay_objective(
    base: PlantConfig,
    dataset: TransitionDataset,
    windows: Sequence[Window],
    h: float,
    *,
    n_shards: int = 1,
    pool: Optional[ShardPool] = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Mean free-run MSE over `windows` for each candidate; divergence scores inf."""
    windows = list(windows)
    W, n = len(windows), dataset.n_joints

    def objective(pop: np.ndarray) -> np.ndarray:
        P = pop.shape[0]
        per_env = {k: np.repeat(v, W, axis=0) for k, v in unpack_params(pop, n).items()}
        tiled = [w for _ in range(P) for w in windows]

        chunks = iter(shard_bounds(P * W, n_shards))

        def factory(count: int) -> CemPlant:
            b = next(chunks)
            return CemPlant(base, {k: v[b] for k, v in per_env.items()}, count, h)

        plant = ShardedPlant(factory, P * W, n_shards, seed=0, pool=pool)
        result = replay_windows(None, dataset, tiled, plant=plant)
        mse = result.mse.reshape(P, W)
        bad = result.diverged.reshape(P, W).any(axis=1)
        return np.where(bad, np.inf, np.mean(np.nan_to_num(mse), axis=1))

    return objective


@dataclass
class CemFit:
    params: Dict[str, np.ndarray]
    objective: float
    trace: pd.DataFrame
    windows: List[Window]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": {k: v.tolist() for k, v in self.params.items()},
            "objective": self.objective,
            "windows": [asdict(w) for w in self.windows],
        }


def cem_fit(
    cfg: CemConfig,
    dataset: TransitionDataset,
    base: PlantConfig,
    seed: int,
    *,
    h: float = 0.005,
    n_shards: int = 1,
    pool: Optional[ShardPool] = None,
) -> CemFit:
    """Fit per-joint (coulomb, visc, armature) on training windows; returns the best-ever candidate."""
    train = dataset.select(TRAIN_TAGS)
    window_seed, search_seed = np.random.SeedSequence(seed).spawn(2)
    windows = sample_windows(train, TRAIN_TAGS, cfg.n_windows, cfg.window_s, np.random.default_rng(window_seed))
    lower, upper = param_bounds(cfg, dataset.n_joints)
    objective = replay_objective(base, train, windows, h, n_shards=n_shards, pool=pool)
    logger.info(
        "fit-cem: population=%d elites=%d iterations=%d windows=%d x %.1fs",
        cfg.population, cfg.n_elite, cfg.iterations, len(windows), cfg.window_s,
    )
    result = cem_optimize(objective, lower, upper, cfg, np.random.default_rng(search_seed), name="fit-cem")
    params = unpack_params(result.best_x, dataset.n_joints)
    logger.info("fit-cem: best objective %.6g rad^2", result.best_score)
    return CemFit({k: v.copy() for k, v in params.items()}, result.best_score, result.trace, windows)


def write_params(fit: CemFit, path: str) -> str:
    """Fitted-parameter table: one row per joint, named columns."""
    n = len(fit.params["coulomb"])
    frame = pd.DataFrame({"joint": np.arange(n), **{k: fit.params[k] for k in PARAM_NAMES}})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_params(path: str) -> Dict[str, np.ndarray]:
    frame = pd.read_csv(path, float_precision="round_trip").sort_values("joint")
    return {k: frame[k].to_numpy(dtype=np.float64) for k in PARAM_NAMES}
