"""
File: src/pipeline/nodes/common.py
Task: Shared plumbing for stage nodes: error capture, timing and loading
what earlier stages left on disk.
"""

from __future__ import annotations

import functools
import logging
import time
from typing import Any, Callable, Dict, List, Optional

from ...calib.actnet import ActNetModel
from ...calib.cem import read_params
from ...calib.uan import UanModel
from ...config import WorkbenchConfig
from ...data.datagen import TransitionDataset
from ...data.loaders import load_dataset
from ...errors import WorkbenchError
from ...tasks.training import CalibrationArtifacts, TaskPolicy
from ..artifacts import require_artifact
from ..state import PipelineState

logger = logging.getLogger(__name__)

# which calibration stage each variant needs
CALIBRATION_STAGE = {"uan": "train-uan", "cem": "fit-cem", "actnet": "train-actnet"}


def stage_node(name: str) -> Callable[[Callable[[PipelineState], Dict[str, Any]]], Callable[[PipelineState], Dict[str, Any]]]:
    """Wrap a node body: WorkbenchErrors become state["error"], wall-clock goes to state["timing"]."""

    def wrap(fn):
        @functools.wraps(fn)
        def node(state: PipelineState) -> Dict[str, Any]:
            t0 = time.perf_counter()
            timing = dict(state.get("timing") or {})
            try:
                out = fn(state)
            except WorkbenchError as e:
                logger.error("%s failed: %s %s", name, e, e.payload)
                out = {"error": dict(e.to_dict(), stage=name)}
            timing[name] = time.perf_counter() - t0
            out["timing"] = timing
            return out

        return node

    return wrap


def calibration_stage(stage: str, data_seed: int) -> str:
    """Calibrations are keyed by the dataset they were fit on as well as their own seed."""
    return f"{stage}:data{int(data_seed)}"


def load_collected(cfg: WorkbenchConfig, seed: int) -> TransitionDataset:
    path = require_artifact(cfg, "collect", seed, "dataset")
    ds, _ = load_dataset(path, expected_timestep=cfg.timestep)
    return ds


def load_calibration(cfg: WorkbenchConfig, data_seed: int, calib_seed: int, variants: List[str]) -> CalibrationArtifacts:
    """Load only what `variants` need; a missing stage raises MissingArtifactError naming its path."""
    out = CalibrationArtifacts()
    for v in variants:
        stage = CALIBRATION_STAGE.get(v)
        if stage is None:
            continue
        key = calibration_stage(stage, data_seed)
        if v == "uan":
            out.uan = UanModel.load(require_artifact(cfg, key, calib_seed, "model"))
        elif v == "cem":
            out.cem_params = read_params(require_artifact(cfg, key, calib_seed, "params"))
        else:
            out.actnet = ActNetModel.load(require_artifact(cfg, key, calib_seed, "model"))
    return out


def finetune_stage(variant: str, mode: str) -> str:
    return f"finetune:{variant}:{mode}"


def load_policy(cfg: WorkbenchConfig, stage: str, seed: int) -> TaskPolicy:
    return TaskPolicy.load(require_artifact(cfg, stage, seed, "policy"))


def try_load_policy(cfg: WorkbenchConfig, stage: str, seed: int) -> Optional[TaskPolicy]:
    try:
        return load_policy(cfg, stage, seed)
    except WorkbenchError:
        return None
