"""
File: src/pipeline/nodes/evaluate.py
Task: Assemble the EvalReport.

- mse / one_step: every variant replayed on the same tiled windows, once per
  calibration seed (rows carry calib_seed; acceptance takes the median)
- throw: each variant's fine-tuned policy in its training sim vs the reference plant
- ablation: fine-tune modes and the tracking-only policy, thrown in the default sim

Throw and ablation rows are only produced for policies that exist; the
calibration artifacts are required.
"""

from __future__ import annotations
from typing import Dict, Any, List
import logging

import pandas as pd

from ...evaluation.acceptance import LONG_REGIME, run_acceptance
from ...evaluation.metrics import mse_table, one_step_mse, rollout_mse, run_throw_episodes, throw_transfer_gap
from ...evaluation.report import EvalReport, read_report, write_report
from ...tasks.training import FINETUNE_MODES, VARIANTS
from ..artifacts import is_complete, stage_dir, stage_hash, write_manifest
from ..state import PipelineState
from .common import calibration_stage, finetune_stage, load_calibration, load_collected, stage_node, try_load_policy

logger = logging.getLogger(__name__)

ONE_STEP_VARIANTS = ("default", "actnet", "uan")


def _with_seed(frame: pd.DataFrame, calib_seed: int) -> pd.DataFrame:
    frame = frame.copy()
    frame.insert(2, "calib_seed", int(calib_seed))
    return frame


def _replay_tables(state: PipelineState, ds) -> Dict[str, pd.DataFrame]:
    cfg, seed = state["cfg"], state["seed"]
    noise = ds.select(("gaussian",))
    mse: List[pd.DataFrame] = []
    one: List[pd.DataFrame] = []
    for c in state.get("calib_seeds") or [seed]:
        calib = load_calibration(cfg, seed, c, list(VARIANTS))
        for variant in VARIANTS:
            mse.append(_with_seed(rollout_mse(cfg, variant, ds, artifacts=calib, seed=c, pool=state.get("pool")), c))
            if variant in ONE_STEP_VARIANTS:
                one.append(_with_seed(one_step_mse(cfg, variant, ds, artifacts=calib, seed=c, pool=state.get("pool")), c))
                # whole noise session, free-running
                long = rollout_mse(cfg, variant, noise, artifacts=calib, window_s=cfg.datagen.noise_duration, seed=c, pool=state.get("pool"))
                long["regime"] = LONG_REGIME
                mse.append(_with_seed(long, c))
    return {"mse": _ordered(mse), "one_step": _ordered(one)}


def _ordered(frames: List[pd.DataFrame]) -> pd.DataFrame:
    table = mse_table(frames)
    if "calib_seed" not in table.columns:
        return table
    cols = ["variant", "regime", "calib_seed"] + [c for c in table.columns if c not in ("variant", "regime", "calib_seed")]
    return table.sort_values(["calib_seed"], kind="stable")[cols].reset_index(drop=True)


def _throw_tables(state: PipelineState) -> Dict[str, pd.DataFrame]:
    cfg, seed, pool = state["cfg"], state["seed"], state.get("pool")
    rows = []
    for variant in VARIANTS:
        policy = try_load_policy(cfg, finetune_stage(variant, "finetune"), seed)
        if policy is None:
            logger.warning("eval: no fine-tuned %s policy; skipping its transfer gap", variant)
            continue
        calib = load_calibration(cfg, seed, seed, [variant])
        rows.append(throw_transfer_gap(cfg, policy, variant, seed=seed, artifacts=calib, pool=pool).row())

    ablation = []
    candidates = [("no-finetune", "pretrain")] + [(m, finetune_stage("default", m)) for m in FINETUNE_MODES]
    for mode, stage in candidates:
        policy = try_load_policy(cfg, stage, seed)
        if policy is None:
            continue
        outcome = run_throw_episodes(cfg, policy, "default", cfg.eval.n_episodes, seed, pool=pool)
        ablation.append({
            "mode": mode,
            "distance": outcome.distance,
            "release_speed": outcome.release_speed,
            "dropped": outcome.n_dropped,
            "diverged": outcome.n_diverged,
        })
    return {"throw": pd.DataFrame(rows), "ablation": pd.DataFrame(ablation)}


@stage_node("eval")
def evaluate_node(state: PipelineState) -> Dict[str, Any]:
    cfg, seed = state["cfg"], state["seed"]
    out = stage_dir(cfg, "eval", seed)
    artifacts = dict(state.get("artifacts") or {})
    artifacts["eval"] = out
    if is_complete(out):
        logger.info("eval: reusing %s", out)
        return {"artifacts": artifacts, "report": read_report(out), "report_dir": out}

    ds = load_collected(cfg, seed)
    tables = _replay_tables(state, ds)
    tables.update(_throw_tables(state))
    calib_seeds = list(state.get("calib_seeds") or [seed])
    hashes = {s: stage_hash(cfg, s) for s in ("collect", "train-uan", "fit-cem", "train-actnet", "pretrain", "finetune", "eval")}
    report = EvalReport(
        seeds={"data": seed, "calibration": calib_seeds, "episodes": seed},
        config_hashes=hashes,
        timing=dict(state.get("timing") or {}),
        **tables,
    )
    report.acceptance = run_acceptance(report)
    files = write_report(report, out)
    write_manifest(cfg, "eval", seed, out, files, {"calibration_stages": [calibration_stage(s, seed) for s in ("train-uan", "fit-cem", "train-actnet")]})
    return {"artifacts": artifacts, "report": report, "report_dir": out}
