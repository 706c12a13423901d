from __future__ import annotations
from typing import Dict, Any
import logging
import os

from ...config import build_plant_config
from ...data.datagen import collect, default_sessions
from ...data.loaders import save_dataset
from ...data.profiling import profile_dataset, require_velocity_coverage
from ..artifacts import is_complete, stage_dir, stamp, write_manifest
from ..state import PipelineState
from .common import stage_node

logger = logging.getLogger(__name__)


@stage_node("collect")
def collect_node(state: PipelineState) -> Dict[str, Any]:
    """
    Record the excitation sessions on the reference plant.
    Reuses an existing dataset for the same plant/datagen config and seed.
    """
    cfg, seed = state["cfg"], state["seed"]
    out = stage_dir(cfg, "collect", seed)
    artifacts = dict(state.get("artifacts") or {})
    artifacts["collect"] = out
    if is_complete(out):
        logger.info("collect: reusing %s", out)
        return {"artifacts": artifacts}

    plant = build_plant_config(cfg, reference=True)
    sessions = default_sessions(cfg, plant, seed)
    ds = collect(plant, sessions, seed, cfg.timestep, meta=stamp(cfg, "collect", seed))
    require_velocity_coverage(ds, ("gaussian",))
    path = save_dataset(ds, os.path.join(out, "dataset.csv"))
    profile = profile_dataset(ds)
    write_manifest(cfg, "collect", seed, out, {"dataset": path}, {"profile": profile})
    return {"artifacts": artifacts}
