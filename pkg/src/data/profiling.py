"""
Coverage profiling for transition datasets.

Produces a JSON-serializable summary per session kind (duration, position
and velocity ranges per joint, velocity-sign coverage, torque spread) used by
the collect stage's manifest and by sanity assertions on the noise data.
"""

from __future__ import annotations

from typing import Any, Dict, List

import numpy as np
import pandas as pd

from ..errors import CoverageError
from .datagen import TransitionDataset


def _joint_stats(part: pd.DataFrame, n_joints: int) -> List[Dict[str, Any]]:
    out = []
    for j in range(n_joints):
        q, qd, tau = part[f"q_{j}"], part[f"qdot_{j}"], part[f"tau_cmd_{j}"]
        out.append({
            "joint": j,
            "q_min": float(q.min()),
            "q_max": float(q.max()),
            "qdot_abs_max": float(qd.abs().max()),
            "qdot_pos_frac": float((qd > 0).mean()),
            "qdot_neg_frac": float((qd < 0).mean()),
            "tau_cmd_std": float(tau.std(ddof=0)),
        })
    return out


def velocity_sign_coverage(ds: TransitionDataset, tags=None) -> Dict[int, bool]:
    """Per joint: True when the selected sessions contain both velocity signs."""
    frame = ds.frame if tags is None else ds.select(tags).frame
    return {
        j: bool((frame[f"qdot_{j}"] > 0).any() and (frame[f"qdot_{j}"] < 0).any())
        for j in range(ds.n_joints)
    }


def require_velocity_coverage(ds: TransitionDataset, tags=("gaussian",)) -> Dict[int, bool]:
    """Raise CoverageError unless every joint moves both ways in the `tags` sessions."""
    coverage = velocity_sign_coverage(ds, tags)
    missing = [j for j, ok in coverage.items() if not ok]
    if missing:
        raise CoverageError(
            f"Joints {missing} never move in both directions in {list(tags)} sessions.",
            payload={"coverage": {str(j): ok for j, ok in coverage.items()}, "tags": list(tags)},
        )
    return coverage


def profile_dataset(ds: TransitionDataset) -> Dict[str, Any]:
    frame = ds.frame
    kinds: Dict[str, Any] = {}
    for tag in sorted(set(ds.tags.values())):
        part = frame[frame["session_id"].isin(ds.session_ids([tag]))]
        kinds[tag] = {
            "n_sessions": len(ds.session_ids([tag])),
            "n_transitions": int(part.shape[0]),
            "duration_s": float(part.shape[0] * ds.timestep),
            "joints": _joint_stats(part, ds.n_joints),
        }
    # motor-side labels miss transmission losses; this ratio shows how much
    cmd = frame[[f"tau_cmd_{j}" for j in range(ds.n_joints)]].to_numpy()
    motor = frame[[f"tau_motor_{j}" for j in range(ds.n_joints)]].to_numpy()
    gap = float(np.sqrt(np.mean((cmd - motor) ** 2))) if len(frame) else 0.0
    return {
        "n_transitions": len(ds),
        "n_sessions": len(ds.tags),
        "timestep": ds.timestep,
        "kinds": kinds,
        "velocity_sign_coverage": {str(k): v for k, v in velocity_sign_coverage(ds).items()},
        "tau_cmd_vs_motor_rms": gap,
    }
