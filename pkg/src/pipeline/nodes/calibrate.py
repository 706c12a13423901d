"""
File: src/pipeline/nodes/calibrate.py
Task: Calibration stages. Each runs once per calibration seed on the
training split of the collected dataset and leaves a model (or parameter
table) plus its training curve in a run-stamped directory.
"""

from __future__ import annotations
from typing import Dict, Any
import logging
import os

from ...calib.actnet import ActNetConfig, supervised_actnet_train
from ...calib.cem import CemConfig, cem_fit, write_params
from ...calib.uan import train_uan
from ...config import build_plant_config
from ...data.datagen import split_train_test
from ...learn.ppo import write_metrics
from ...sim.parallel import ShardedPlant
from ...sim.plants import IdealPlant
from ..artifacts import is_complete, stage_dir, stamp, write_manifest
from ..state import PipelineState
from .common import calibration_stage, load_collected, stage_node

logger = logging.getLogger(__name__)


def _pending(state: PipelineState, stage: str):
    """Yield (calib seed, directory) for every seed whose output is not on disk yet."""
    cfg, data_seed = state["cfg"], state["seed"]
    key = calibration_stage(stage, data_seed)
    for c in state.get("calib_seeds") or [data_seed]:
        out = stage_dir(cfg, key, c)
        if is_complete(out):
            logger.info("%s seed %d: reusing %s", stage, c, out)
            continue
        yield c, key, out


def _artifacts(state: PipelineState, stage: str) -> Dict[str, str]:
    artifacts = dict(state.get("artifacts") or {})
    cfg, data_seed = state["cfg"], state["seed"]
    key = calibration_stage(stage, data_seed)
    for c in state.get("calib_seeds") or [data_seed]:
        artifacts[f"{key}:s{c}"] = stage_dir(cfg, key, c)
    return artifacts


@stage_node("train-uan")
def train_uan_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["cfg"]
    train = None
    for c, key, out in _pending(state, "train-uan"):
        if train is None:
            train, _ = split_train_test(load_collected(cfg, state["seed"]))
        sim = build_plant_config(cfg, reference=False)
        plant = ShardedPlant(
            lambda n: IdealPlant(sim, n, cfg.timestep),
            cfg.ppo_uan.n_envs, min(cfg.n_shards, cfg.ppo_uan.n_envs), c, pool=state.get("pool"),
        )
        model, result = train_uan(cfg, train, c, plant=plant, updates=state.get("updates"))
        files = {
            "model": model.save(os.path.join(out, "uan.npz"), stamp(cfg, key, c)),
            "metrics": write_metrics(result.metrics, os.path.join(out, "metrics.csv")),
        }
        write_manifest(cfg, key, c, out, files, {"updates": result.updates_done})
    return {"artifacts": _artifacts(state, "train-uan")}


@stage_node("fit-cem")
def fit_cem_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["cfg"]
    train = None
    for c, key, out in _pending(state, "fit-cem"):
        if train is None:
            train, _ = split_train_test(load_collected(cfg, state["seed"]))
        fit = cem_fit(
            CemConfig.from_section(cfg.cem), train, build_plant_config(cfg, reference=False), c,
            h=cfg.timestep, n_shards=cfg.n_shards, pool=state.get("pool"),
        )
        os.makedirs(out, exist_ok=True)
        files = {"params": write_params(fit, os.path.join(out, "params.csv"))}
        files["trace"] = os.path.join(out, "trace.csv")
        fit.trace.to_csv(files["trace"], index=False, float_format="%.17g")
        write_manifest(cfg, key, c, out, files, {"fit": fit.to_dict()})
    return {"artifacts": _artifacts(state, "fit-cem")}


@stage_node("train-actnet")
def train_actnet_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["cfg"]
    train = None
    for c, key, out in _pending(state, "train-actnet"):
        if train is None:
            train, _ = split_train_test(load_collected(cfg, state["seed"]))
        result = supervised_actnet_train(ActNetConfig.from_workbench(cfg), train, build_plant_config(cfg, reference=False), c)
        files = {
            "model": result.model.save(os.path.join(out, "actnet.npz"), stamp(cfg, key, c)),
            "metrics": write_metrics(result.metrics, os.path.join(out, "metrics.csv")),
        }
        write_manifest(cfg, key, c, out, files, {"train_mse": result.train_mse, "test_mse": result.test_mse})
    return {"artifacts": _artifacts(state, "train-actnet")}
