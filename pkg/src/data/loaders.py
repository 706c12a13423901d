"""
Dataset file I/O for recorded transitions.

Format: a few `# key: json` header lines (timestep, joint count, plant hash,
seed, session tags), then a CSV table written by pandas with 17 significant
digits, so every float64 survives a save/load round trip bit-exact.
Loading validates the header, the row count and per-session chain
consistency, and reports problems as tool-friendly DataLoadError payloads
carrying the offending line / record index.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..errors import WorkbenchError
from .datagen import TransitionDataset, column_names

FORMAT_TAG = "uan-workbench transitions v1"


# --------- Errors (tool-friendly) ---------

class DataLoadError(WorkbenchError):
    pass


# --------- Metadata ---------

@dataclass
class DatasetMeta:
    path: str
    n_rows: int
    n_joints: int
    timestep: float
    n_sessions: int
    tags: Dict[str, int]
    plant_hash: Optional[str] = None
    seed: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def describe(ds: TransitionDataset, path: str = "") -> DatasetMeta:
    counts: Dict[str, int] = {}
    for tag in ds.tags.values():
        counts[tag] = counts.get(tag, 0) + 1
    return DatasetMeta(
        path=path,
        n_rows=len(ds),
        n_joints=ds.n_joints,
        timestep=ds.timestep,
        n_sessions=len(ds.tags),
        tags=counts,
        plant_hash=ds.meta.get("plant_hash"),
        seed=ds.meta.get("seed"),
    )


# --------- Save ---------

def save_dataset(ds: TransitionDataset, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    body = ds.frame[column_names(ds.n_joints)].to_csv(index=False, float_format="%.17g", lineterminator="\n")
    header = {
        "format": FORMAT_TAG,
        "timestep": ds.timestep,
        "n_joints": ds.n_joints,
        "n_rows": len(ds),
        "sessions": {str(k): v for k, v in sorted(ds.tags.items())},
        "meta": ds.meta,
        "body_sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        fh.write(body)
    os.replace(tmp, path)
    return path


# --------- Load ---------

def _read_header(path: str) -> Tuple[Dict[str, Any], int]:
    header: Dict[str, Any] = {}
    n_lines = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            n_lines += 1
            key, _, raw = line[2:].partition(": ")
            try:
                header[key] = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DataLoadError("Malformed header line.", payload={"path": path, "line": n_lines, "error": repr(e)})
    return header, n_lines


def load_dataset(path: str, *, expected_timestep: Optional[float] = None) -> Tuple[TransitionDataset, DatasetMeta]:
    """
    Load a transition dataset from path.

    Returns (dataset, meta). Refuses files whose timestep differs from
    `expected_timestep` when one is given.
    """
    if not path or not isinstance(path, str):
        raise DataLoadError("Invalid path input.", payload={"path": path})
    if not os.path.exists(path):
        raise DataLoadError("File not found.", payload={"path": path})

    header, n_header = _read_header(path)
    for key in ("format", "timestep", "n_joints", "n_rows", "sessions"):
        if key not in header:
            raise DataLoadError("Dataset header incomplete.", payload={"path": path, "missing": key})
    if header["format"] != FORMAT_TAG:
        raise DataLoadError("Unknown dataset format.", payload={"path": path, "format": header["format"]})

    timestep = float(header["timestep"])
    if expected_timestep is not None and timestep != float(expected_timestep):
        raise DataLoadError(
            "Dataset timestep does not match the configured timestep.",
            payload={"path": path, "file_timestep": timestep, "expected_timestep": float(expected_timestep)},
        )

    n = int(header["n_joints"])
    cols = column_names(n)
    try:
        df = pd.read_csv(path, skiprows=n_header, float_precision="round_trip")
    except Exception as e:
        raise DataLoadError("Failed to parse dataset table.", payload={"path": path, "error": repr(e)})

    if list(df.columns) != cols:
        raise DataLoadError("Unexpected columns.", payload={"path": path, "line": n_header + 1, "columns": list(df.columns)})

    bad = np.flatnonzero(df.isna().any(axis=1).to_numpy())
    if bad.size:
        rec = int(bad[0])
        raise DataLoadError(
            "Malformed or truncated record.",
            payload={"path": path, "record": rec, "line": n_header + 2 + rec},
        )
    if df.shape[0] != int(header["n_rows"]):
        raise DataLoadError(
            "Row count does not match header (truncated file?).",
            payload={"path": path, "expected_rows": int(header["n_rows"]), "rows": int(df.shape[0]),
                     "record": int(df.shape[0])},
        )
    if "body_sha256" in header:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            body = "".join(fh.readlines()[n_header:])
        if hashlib.sha256(body.encode("utf-8")).hexdigest() != header["body_sha256"]:
            raise DataLoadError(
                "Table checksum mismatch (file truncated or edited).",
                payload={"path": path, "record": int(df.shape[0]) - 1, "line": n_header + 1 + int(df.shape[0])},
            )

    df["session_id"] = df["session_id"].astype(np.int64)
    df["step"] = df["step"].astype(np.int64)
    tags = {int(k): v for k, v in header["sessions"].items()}
    ds = TransitionDataset(df, timestep, n, tags, header.get("meta", {}))

    for sid, part in df.groupby("session_id", sort=False):
        steps = part["step"].to_numpy()
        if not np.array_equal(steps, np.arange(steps.shape[0])):
            rec = int(part.index[int(np.flatnonzero(steps != np.arange(steps.shape[0]))[0])])
            raise DataLoadError("Non-consecutive step index.", payload={"path": path, "session_id": int(sid), "record": rec})
    violations = ds.chain_violations()
    if violations:
        raise DataLoadError("Session chain-consistency violated.", payload={"path": path, "violations": violations})

    return ds, describe(ds, path)
