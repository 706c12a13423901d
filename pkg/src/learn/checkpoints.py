"""
File: src/learn/checkpoints.py
Task: Self-describing checkpoint files for MLPs (+ optional Gaussian head).

Layout (numpy .npz): `sizes` (int64 layer sizes), then `W0, b0, W1, b1, ...`
in declared order, optional `log_std`, and `meta` (JSON string with config
hash, seed, code version and anything else the caller stamps in).
"""

from __future__ import annotations

import json
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..errors import MissingArtifactError, WorkbenchError
from .nn import GaussianHead, MlpParams


def save_checkpoint(
    path: str,
    params: MlpParams,
    head: Optional[GaussianHead] = None,
    meta: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, np.ndarray]] = None,
) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    arrays: Dict[str, np.ndarray] = {"sizes": np.asarray(params.sizes, dtype=np.int64)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    if head is not None:
        arrays["log_std"] = head.log_std
    for k, v in (extra or {}).items():
        arrays[f"extra_{k}"] = np.asarray(v)
    arrays["meta"] = np.asarray(json.dumps(meta or {}, sort_keys=True))
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str) -> Tuple[MlpParams, Optional[GaussianHead], Dict[str, Any], Dict[str, np.ndarray]]:
    if not os.path.exists(path):
        raise MissingArtifactError("Checkpoint not found.", payload={"expected_path": path})
    try:
        with np.load(path, allow_pickle=False) as data:
            sizes = tuple(int(s) for s in data["sizes"])
            n = len(sizes) - 1
            params = MlpParams(
                sizes,
                [data[f"W{i}"].astype(np.float64) for i in range(n)],
                [data[f"b{i}"].astype(np.float64) for i in range(n)],
            )
            head = GaussianHead(data["log_std"]) if "log_std" in data.files else None
            meta = json.loads(str(data["meta"])) if "meta" in data.files else {}
            extra = {k[len("extra_"):]: data[k] for k in data.files if k.startswith("extra_")}
    except (KeyError, ValueError, OSError) as e:
        raise WorkbenchError("Malformed checkpoint.", payload={"path": path, "error": repr(e)})
    return params, head, meta, extra
