"""
File: src/evaluation/acceptance.py
Task: Ordering checks over a finished EvalReport. Each check returns a JSON
record {name, passed, detail, values}; passed is None when the report lacks
the rows the check needs (the stage was not run).

Ratios are asserted, not absolute numbers: the reference plant is a desk-scale
stand-in, so only the comparisons between variants are meaningful.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..errors import AcceptanceError
from .report import EvalReport

logger = logging.getLogger(__name__)

LONG_REGIME = "gaussian-long"


def _check(name: str, passed: Optional[bool], detail: str, **values) -> Dict[str, Any]:
    return {"name": name, "passed": passed, "detail": detail, "values": values}


def median_mse(table: pd.DataFrame, variant: str, regime: str) -> Optional[float]:
    """Median over calibration seeds; inf when any seed diverged on every window."""
    if table.empty:
        return None
    rows = table[(table["variant"] == variant) & (table["regime"] == regime)]
    if rows.empty:
        return None
    vals = np.where(rows["n_diverged"] >= rows["n_windows"], np.inf, rows["mse_mean"].astype(float))
    return float(np.median(vals))


def calibration_ordering(report: EvalReport) -> Dict[str, Any]:
    t = report.mse
    uan, cem, default = (median_mse(t, v, "throw") for v in ("uan", "cem", "default"))
    uan_g, default_g = median_mse(t, "uan", "gaussian"), median_mse(t, "default", "gaussian")
    if None in (uan, cem, default, uan_g, default_g):
        return _check("calibration_ordering", None, "missing rows")
    ok = uan <= 0.6 * cem and cem <= 0.8 * default and uan_g <= 0.2 * default_g
    return _check(
        "calibration_ordering", bool(ok),
        "throw: uan <= 0.6 cem, cem <= 0.8 default; gaussian: uan <= 0.2 default",
        uan=uan, cem=cem, default=default, uan_gaussian=uan_g, default_gaussian=default_g,
    )


def actnet_failure_mode(report: EvalReport) -> Dict[str, Any]:
    one = median_mse(report.one_step, "actnet", "gaussian")
    free = median_mse(report.mse, "actnet", LONG_REGIME)
    uan_free = median_mse(report.mse, "uan", LONG_REGIME)
    if None in (one, free, uan_free):
        return _check("actnet_failure_mode", None, "missing rows")
    ok = one < free and (not np.isfinite(free) or free >= 5.0 * uan_free)
    return _check(
        "actnet_failure_mode", bool(ok),
        "actnet one-step error small, long free-run >= 5x uan or diverged",
        one_step=one, free_run=free, uan_free_run=uan_free,
    )


def _throw_row(table: pd.DataFrame, variant: str) -> Optional[pd.Series]:
    if table.empty:
        return None
    rows = table[table["variant"] == variant]
    return None if rows.empty else rows.iloc[0]


def transfer_gap(report: EvalReport) -> Dict[str, Any]:
    uan, default = _throw_row(report.throw, "uan"), _throw_row(report.throw, "default")
    if uan is None or default is None:
        return _check("transfer_gap", None, "missing rows")
    ok = uan["gap"] <= 0.3 * default["gap"] and uan["d_ref"] > default["d_ref"]
    return _check(
        "transfer_gap", bool(ok),
        "gap(uan) <= 0.3 gap(default) and reference distance(uan) > reference distance(default)",
        gap_uan=float(uan["gap"]), gap_default=float(default["gap"]),
        d_ref_uan=float(uan["d_ref"]), d_ref_default=float(default["d_ref"]),
    )


def finetune_benefit(report: EvalReport) -> Dict[str, Any]:
    t = report.ablation
    if t.empty:
        return _check("finetune_benefit", None, "missing rows")
    by_mode = {r["mode"]: r for _, r in t.iterrows()}
    if "finetune" not in by_mode or "no-finetune" not in by_mode:
        return _check("finetune_benefit", None, "missing rows")
    ft, base = by_mode["finetune"], by_mode["no-finetune"]
    ok = ft["distance"] >= 1.3 * base["distance"] and ft["release_speed"] > base["release_speed"]
    return _check(
        "finetune_benefit", bool(ok),
        "fine-tuned distance >= 1.3x tracking-only, release speed higher",
        distance=float(ft["distance"]), distance_tracking=float(base["distance"]),
        speed=float(ft["release_speed"]), speed_tracking=float(base["release_speed"]),
    )


CHECKS = (calibration_ordering, actnet_failure_mode, transfer_gap, finetune_benefit)


def run_acceptance(report: EvalReport) -> List[Dict[str, Any]]:
    results = [check(report) for check in CHECKS]
    for r in results:
        status = "skipped" if r["passed"] is None else ("passed" if r["passed"] else "FAILED")
        logger.info("acceptance %s: %s", r["name"], status)
    return results


def enforce(report: EvalReport) -> None:
    failed = [c for c in report.acceptance if c.get("passed") is False]
    if failed:
        raise AcceptanceError(
            "Acceptance ordering failed.",
            payload={"failed": [c["name"] for c in failed], "checks": failed},
        )
