"""
File: src/evaluation/report.py
Task: EvalReport assembly and its on-disk format.

A report directory holds:
- report.json: the machine-readable tree (schema version, provenance, every table as records)
- mse.csv, one_step.csv, throw.csv, ablation.csv: flat tables for plotting
- timing.json: wall-clock per stage, kept apart so report.json is reproducible bit-exact
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import pandas as pd

from ..config import CODE_VERSION
from ..errors import MissingArtifactError, WorkbenchError

SCHEMA_VERSION = 1
MSE_UNITS = "rad^2, mean over joints and steps of (q_sim - q_real)^2 per window; mean/std over windows"
TABLES = ("mse", "one_step", "throw", "ablation")


@dataclass
class EvalReport:
    mse: pd.DataFrame = field(default_factory=pd.DataFrame)
    one_step: pd.DataFrame = field(default_factory=pd.DataFrame)
    throw: pd.DataFrame = field(default_factory=pd.DataFrame)
    # fine-tune ablations on the training sim: mode, distance, release speed
    ablation: pd.DataFrame = field(default_factory=pd.DataFrame)
    seeds: Dict[str, Any] = field(default_factory=dict)
    config_hashes: Dict[str, str] = field(default_factory=dict)
    acceptance: List[Dict[str, Any]] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    code_version: str = CODE_VERSION

    @property
    def passed(self) -> bool:
        # skipped checks carry passed=None
        return all(c.get("passed") is not False for c in self.acceptance)

    def tree(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "code_version": self.code_version,
            "mse_units": MSE_UNITS,
            "seeds": _clean(self.seeds),
            "config_hashes": self.config_hashes,
            "tables": {name: _records(getattr(self, name)) for name in TABLES},
            "acceptance": _clean(self.acceptance),
        }


def _clean(value: Any) -> Any:
    # numpy scalars -> python; NaN/inf -> None so the tree is strict JSON
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return [{k: _clean(v) for k, v in row.items()} for row in frame.to_dict(orient="records")]


def write_report(report: EvalReport, directory: str) -> Dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {"report": os.path.join(directory, "report.json")}
    try:
        with open(paths["report"], "w", encoding="utf-8") as f:
            json.dump(report.tree(), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
        for name in TABLES:
            paths[name] = os.path.join(directory, f"{name}.csv")
            getattr(report, name).to_csv(paths[name], index=False, float_format="%.17g", lineterminator="\n")
        paths["timing"] = os.path.join(directory, "timing.json")
        with open(paths["timing"], "w", encoding="utf-8") as f:
            json.dump(report.timing, f, indent=2, sort_keys=True)
    except OSError as e:
        raise WorkbenchError("Could not write the report.", payload={"directory": directory, "error": repr(e)})
    return paths


def read_report(directory: str) -> EvalReport:
    path = os.path.join(directory, "report.json")
    if not os.path.exists(path):
        raise MissingArtifactError("Report not found.", payload={"expected_path": path})
    with open(path, "r", encoding="utf-8") as f:
        tree = json.load(f)
    if tree.get("schema_version") != SCHEMA_VERSION:
        raise WorkbenchError("Unsupported report schema.", payload={"path": path, "schema_version": tree.get("schema_version")})
    tables = {name: pd.DataFrame(tree["tables"].get(name, [])) for name in TABLES}
    timing: Dict[str, float] = {}
    timing_path = os.path.join(directory, "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path, "r", encoding="utf-8") as f:
            timing = json.load(f)
    return EvalReport(
        seeds=tree["seeds"],
        config_hashes=tree["config_hashes"],
        acceptance=tree["acceptance"],
        timing=timing,
        schema_version=tree["schema_version"],
        code_version=tree["code_version"],
        **tables,
    )
