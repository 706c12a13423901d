"""
File: src/pipeline/nodes/policy.py
Task: Task-policy stages. Pre-training runs once per seed on the default
sim; fine-tuning runs every (variant, mode) job in state["finetune_jobs"]
against the calibrations fit with the same seed.
"""

from __future__ import annotations
from typing import Dict, Any
import logging
import os

from ...learn.ppo import write_metrics
from ...tasks.training import finetune, pretrain
from ..artifacts import is_complete, stage_dir, stamp, write_manifest
from ..state import PipelineState
from .common import finetune_stage, load_calibration, load_policy, stage_node

logger = logging.getLogger(__name__)


@stage_node("pretrain")
def pretrain_node(state: PipelineState) -> Dict[str, Any]:
    cfg, seed = state["cfg"], state["seed"]
    out = stage_dir(cfg, "pretrain", seed)
    artifacts = dict(state.get("artifacts") or {})
    artifacts["pretrain"] = out
    if is_complete(out):
        logger.info("pretrain: reusing %s", out)
        return {"artifacts": artifacts}
    policy, result = pretrain(cfg, seed, updates=state.get("updates"), pool=state.get("pool"))
    files = {
        "policy": policy.save(os.path.join(out, "policy"), stamp(cfg, "pretrain", seed)),
        "metrics": write_metrics(result.metrics, os.path.join(out, "metrics.csv")),
    }
    write_manifest(cfg, "pretrain", seed, out, files, {"updates": result.updates_done})
    return {"artifacts": artifacts}


@stage_node("finetune")
def finetune_node(state: PipelineState) -> Dict[str, Any]:
    cfg, seed = state["cfg"], state["seed"]
    artifacts = dict(state.get("artifacts") or {})
    pretrained = None
    for variant, mode in state.get("finetune_jobs") or []:
        stage = finetune_stage(variant, mode)
        out = stage_dir(cfg, stage, seed)
        artifacts[stage] = out
        if is_complete(out):
            logger.info("%s: reusing %s", stage, out)
            continue
        if mode != "no-pretrain" and pretrained is None:
            pretrained = load_policy(cfg, "pretrain", seed)
        calib = load_calibration(cfg, seed, seed, [variant])
        policy, result = finetune(
            cfg, pretrained, variant, seed,
            mode=mode, artifacts=calib, updates=state.get("updates"), pool=state.get("pool"),
        )
        files = {
            "policy": policy.save(os.path.join(out, "policy"), stamp(cfg, stage, seed)),
            "metrics": write_metrics(result.metrics, os.path.join(out, "metrics.csv")),
        }
        write_manifest(cfg, stage, seed, out, files, {"updates": result.updates_done, "variant": variant, "mode": mode})
    return {"artifacts": artifacts}
