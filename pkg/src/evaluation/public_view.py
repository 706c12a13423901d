"""
public_view.py

Turns a full EvalReport tree into the short summary printed at the end of a
run (and stored in pipeline state as `public_report`).

- Keeps only allowlisted keys
- Collapses the tables to the headline numbers per variant
- Leaves per-window and per-episode detail to the CSV files
"""

from __future__ import annotations
from typing import Dict, Any, List


DEFAULT_ALLOWLIST = [
    "schema_version",
    "mse_units",
    "seeds",
    "tables",
    "acceptance",
    "error",
]


def make_public_report(tree: Dict[str, Any], allowlist: List[str] | None = None) -> Dict[str, Any]:
    allow = set(allowlist or DEFAULT_ALLOWLIST)
    src = tree or {}
    out: Dict[str, Any] = {k: src[k] for k in allow if k in src}

    tables = out.pop("tables", None)
    if isinstance(tables, dict):
        # held-out throw regime only: the headline calibration number
        out["throw_mse"] = {
            r["variant"]: r.get("mse_mean")
            for r in tables.get("mse") or []
            if r.get("regime") == "throw"
        }
        out["throw_gap"] = {
            r["variant"]: {"d_sim": r.get("d_sim"), "d_ref": r.get("d_ref"), "gap": r.get("gap")}
            for r in tables.get("throw") or []
        }

    acc = out.get("acceptance")
    if isinstance(acc, list):
        out["acceptance"] = [{"name": c.get("name"), "passed": c.get("passed")} for c in acc]

    return out
