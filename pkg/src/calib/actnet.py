"""
File: src/calib/actnet.py
Task: Supervised actuator-net baseline. Same per-joint network and input as
the UAN (20-step PD-equivalent error / velocity history), regressed onto the
recorded motor-side torque estimate (`tau_motor`). Those labels are taken
after the lag and the clipping but before efficiency and friction, so the
net learns an actuator that never loses torque in the transmission.

Deployed by replacing the simulator's applied torque with the prediction
(no clipping on top).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import WorkbenchConfig
from ..data.datagen import TRAIN_TAGS, TransitionDataset
from ..errors import TrainingAbortedError
from ..learn.checkpoints import load_checkpoint, save_checkpoint
from ..learn.nn import AdamWState, MlpParams, adamw_step, backward, forward, forward_cached, init_mlp, params_from_arrays
from ..sim.actuator import PlantConfig, step_applied
from ..sim.plants import PlantBatch
from .uan import HISTORY_LEN, build_observation, pd_equivalent_error

logger = logging.getLogger(__name__)

LABEL_SOURCE = "tau_motor: post-lag post-clip motor torque, before efficiency and friction"


@dataclass
class ActNetConfig:
    hidden: Tuple[int, ...] = (128, 128)
    history: int = HISTORY_LEN
    dq_scale: float = 0.5
    epochs: int = 60
    batch_size: int = 512
    lr: float = 1.0e-3
    weight_decay: float = 0.01
    test_frac: float = 0.1

    @classmethod
    def from_workbench(cls, cfg: WorkbenchConfig) -> "ActNetConfig":
        a = cfg.actnet
        return cls(tuple(a.hidden), cfg.uan.history, cfg.uan.dq_scale, a.epochs, a.batch_size, a.lr, a.weight_decay, a.test_frac)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def history_features(
    tau_cmd: np.ndarray,
    qdot: np.ndarray,
    kp,
    kd,
    history: int,
) -> np.ndarray:
    """
    Per-step (error, velocity) histories of one session, shape (T, n, H, 2),
    zero-padded before the first step. Row k ends with step k itself, the
    same layout calibrated_step builds online.
    """
    pairs = np.stack([pd_equivalent_error(tau_cmd, qdot, kp, kd), qdot], axis=-1)
    T, n = pairs.shape[:2]
    padded = np.concatenate([np.zeros((history - 1, n, 2)), pairs], axis=0)
    win = np.lib.stride_tricks.sliding_window_view(padded, history, axis=0)
    # (T, n, 2, H) -> (T, n, H, 2)
    return np.ascontiguousarray(np.moveaxis(win, -1, -2))


def build_training_set(
    dataset: TransitionDataset,
    sim_cfg: PlantConfig,
    cfg: ActNetConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Inputs (N, 2H) and normalized labels (N,) over every joint of every training step."""
    kp, kd = sim_cfg.gains.kp, sim_cfg.gains.kd
    tau_max = np.broadcast_to(sim_cfg.limits.tau_max, (dataset.n_joints,))
    xs, ys = [], []
    train = dataset.select(TRAIN_TAGS)
    for s in train.sessions().values():
        hist = history_features(s.tau_cmd, s.qdot, kp, kd, cfg.history)
        obs = build_observation(hist, cfg.dq_scale, sim_cfg.limits.qdot_max)
        xs.append(obs.reshape(-1, obs.shape[-1]))
        ys.append((s.tau_motor / tau_max).reshape(-1))
    return np.concatenate(xs), np.concatenate(ys)


@dataclass
class ActNetModel:
    params: MlpParams
    tau_max: np.ndarray
    dq_scale: float
    history: int = HISTORY_LEN

    def predict(self, histories: np.ndarray, qdot_max) -> np.ndarray:
        """Torque estimate for histories of shape (E, n, H, 2)."""
        obs = build_observation(histories, self.dq_scale, qdot_max)
        e, n = obs.shape[:2]
        return self.tau_max * forward(self.params, obs.reshape(e * n, -1)).reshape(e, n)

    def save(self, path: str, meta: Optional[Dict[str, Any]] = None) -> str:
        info = {"kind": "actnet", "label_source": LABEL_SOURCE, "dq_scale": self.dq_scale, "history": self.history}
        info.update(meta or {})
        return save_checkpoint(path, self.params, None, info, {"tau_max": self.tau_max})

    @classmethod
    def load(cls, path: str) -> "ActNetModel":
        params, _, meta, extra = load_checkpoint(path)
        return cls(params, extra["tau_max"].astype(np.float64), float(meta["dq_scale"]), int(meta["history"]))


@dataclass
class ActNetResult:
    model: ActNetModel
    train_mse: float
    test_mse: float
    metrics: pd.DataFrame


def _mse(params: MlpParams, x: np.ndarray, y: np.ndarray, chunk: int = 65536) -> float:
    total = 0.0
    for lo in range(0, x.shape[0], chunk):
        err = forward(params, x[lo:lo + chunk])[:, 0] - y[lo:lo + chunk]
        total += float(np.sum(err * err))
    return total / max(1, x.shape[0])


def supervised_actnet_train(
    cfg: ActNetConfig,
    dataset: TransitionDataset,
    sim_cfg: PlantConfig,
    seed: int,
) -> ActNetResult:
    """
    Minibatch AdamW regression. MSEs are reported in normalized units
    (torque / tau_max) on a seeded random hold-out of `test_frac`.
    """
    x, y = build_training_set(dataset, sim_cfg, cfg)
    split_seed, init_seed, batch_seed = np.random.SeedSequence(seed).spawn(3)
    perm = np.random.default_rng(split_seed).permutation(x.shape[0])
    n_test = int(round(cfg.test_frac * x.shape[0]))
    test, train = perm[:n_test], perm[n_test:]
    x_tr, y_tr, x_te, y_te = x[train], y[train], x[test], y[test]

    params = init_mlp([x.shape[1], *cfg.hidden, 1], np.random.default_rng(init_seed), out_gain=1.0)
    opt = AdamWState.for_arrays(params.arrays(), cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng(batch_seed)
    rows = []
    logger.info("train-actnet: %d samples (%d held out), %d epochs", x.shape[0], n_test, cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(x_tr.shape[0])
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            out, cache = forward_cached(params, x_tr[idx])
            err = out[:, 0] - y_tr[idx]
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingAbortedError("Non-finite actuator-net loss.", payload={"stage": "train-actnet", "epoch": epoch})
            grads, _ = backward(params, x_tr[idx], (2.0 * err / idx.size)[:, None], cache)
            params = params_from_arrays(params, adamw_step(opt, params.arrays(), grads.arrays()))
        row = {"epoch": epoch, "train_mse": _mse(params, x_tr, y_tr), "test_mse": _mse(params, x_te, y_te)}
        rows.append(row)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            logger.info("train-actnet epoch %d/%d train=%.3e test=%.3e", epoch + 1, cfg.epochs, row["train_mse"], row["test_mse"])

    tau_max = np.broadcast_to(sim_cfg.limits.tau_max, (dataset.n_joints,)).astype(np.float64)
    model = ActNetModel(params, tau_max, cfg.dq_scale, cfg.history)
    return ActNetResult(model, rows[-1]["train_mse"], rows[-1]["test_mse"], pd.DataFrame(rows))


class ActNetPlant(PlantBatch):
    """The ideal arm driven by the learned torque instead of the clipped command."""

    name = "actnet"

    def __init__(self, cfg: PlantConfig, model: ActNetModel, n_envs: int, h: float = 0.005):
        super().__init__(cfg.as_ideal(), n_envs, h)
        self.model = model
        self.histories = np.zeros((self.n_envs, self.n_joints, model.history, 2))
        self._pending: Optional[np.ndarray] = None

    def _reset_hidden(self, env_ids, rng) -> None:
        self.histories[env_ids] = 0.0

    def _integrate(self, tau_cmd, extra_tau=None):
        if extra_tau is not None:
            raise ValueError("ActNetPlant takes no extra torque")
        gains = self.cfg.gains
        hist = self.histories.copy()
        hist[:, :, :-1, :] = hist[:, :, 1:, :]
        hist[:, :, -1, 0] = pd_equivalent_error(tau_cmd, self.state.qdot, gains.kp, gains.kd)
        hist[:, :, -1, 1] = self.state.qdot
        tau = self.model.predict(hist, self.cfg.limits.qdot_max)
        self._pending = hist
        return step_applied(self.cfg, self.state, tau, self.h), tau

    def _commit_hidden(self, keep: np.ndarray) -> None:
        self.histories[keep] = self._pending[keep]
