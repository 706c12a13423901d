from __future__ import annotations

import copy

import numpy as np
import pytest
import yaml

from src.config import build_plant_config, config_from_dict
from src.data.datagen import collect, default_sessions
from src.sim.dynamics import default_arm

# Seconds-scale settings: every stage runs, nothing is trained to convergence.
TINY = {
    "datagen": {"amplitudes": [2.5], "frequencies": [0.5], "segment_duration": 2.0, "noise_duration": 6.0},
    "nn": {"uan_hidden": [16], "policy_hidden": [16], "value_hidden": [16]},
    "uan": {"episode_s": 1.0},
    "ppo_uan": {"n_envs": 4, "horizon": 8, "updates": 1, "actor_minibatches": 2, "mini_epochs": 1, "log_every": 0},
    "ppo_pretrain": {"n_envs": 4, "horizon": 4, "updates": 1, "actor_minibatches": 2, "mini_epochs": 1, "log_every": 0},
    "ppo_finetune": {"n_envs": 4, "horizon": 4, "updates": 1, "actor_minibatches": 2, "mini_epochs": 1, "log_every": 0},
    "cem": {"population": 8, "iterations": 2, "n_windows": 2, "window_s": 1.0},
    "actnet": {"hidden": [16], "epochs": 1, "batch_size": 256},
    "dr": {"eval_instances": 1},
    "eval": {"window_s": 2.0, "n_episodes": 2, "calib_seeds": [0]},
    "n_shards": 2,
}


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    for name in ("UAN_WORKBENCH_OUT_DIR", "UAN_WORKBENCH_THREADS", "UAN_WORKBENCH_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def arm():
    return default_arm(2)


@pytest.fixture(scope="session")
def tiny_cfg():
    return config_from_dict(copy.deepcopy(TINY))


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg):
    plant = build_plant_config(tiny_cfg, reference=True)
    return collect(plant, default_sessions(tiny_cfg, plant, 0), 0, tiny_cfg.timestep)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(copy.deepcopy(TINY)), encoding="utf-8")
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
