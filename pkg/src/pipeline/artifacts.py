"""
File: src/pipeline/artifacts.py
Task: Run-stamped stage directories and their manifests.

Layout: <out_dir>/<stage>/<config-hash[:12]>-s<seed>/ with a manifest.json
(stage, seed, config hash, code version, produced files). The hash covers
only the config sections the stage depends on, so an unchanged stage maps to
the same directory and is reused instead of rewritten.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Any, Dict, Optional, Sequence

from ..config import CODE_VERSION, STAGE_SECTIONS, WorkbenchConfig, config_hash, dump_config
from ..errors import MissingArtifactError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
EVAL_SECTIONS = STAGE_SECTIONS["finetune"] + ("eval",)


def stage_sections(stage: str) -> Sequence[str]:
    base = stage.split(":", 1)[0]
    if base == "eval":
        return EVAL_SECTIONS
    return STAGE_SECTIONS[base]


def stage_hash(cfg: WorkbenchConfig, stage: str) -> str:
    return config_hash(cfg, stage_sections(stage))


def stage_dir(cfg: WorkbenchConfig, stage: str, seed: int) -> str:
    """`stage` may carry a qualifier after ':' (e.g. "finetune:uan:finetune"); it becomes part of the path."""
    name = stage.replace(":", "-")
    return os.path.join(cfg.out_dir, name, f"{stage_hash(cfg, stage)[:12]}-s{int(seed)}")


def stamp(cfg: WorkbenchConfig, stage: str, seed: int) -> Dict[str, Any]:
    """Provenance carried inside every artifact file that has room for metadata."""
    return {"stage": stage, "seed": int(seed), "config_hash": stage_hash(cfg, stage), "code_version": CODE_VERSION}


def is_complete(directory: str) -> bool:
    return os.path.exists(os.path.join(directory, MANIFEST))


def write_manifest(cfg: WorkbenchConfig, stage: str, seed: int, directory: str, files: Dict[str, str], extra: Optional[Dict[str, Any]] = None) -> str:
    """Written last: a directory without a manifest is an interrupted run and is redone."""
    os.makedirs(directory, exist_ok=True)
    dump_config(cfg, os.path.join(directory, "config.yaml"))
    body = stamp(cfg, stage, seed)
    body["files"] = {k: os.path.relpath(v, directory) for k, v in sorted(files.items())}
    body.update(extra or {})
    path = os.path.join(directory, MANIFEST)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise MissingArtifactError("Stage output not found.", payload={"expected_path": path})
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def require_artifact(cfg: WorkbenchConfig, stage: str, seed: int, key: str) -> str:
    """Absolute path of a file a finished stage produced; MissingArtifactError names what was expected."""
    directory = stage_dir(cfg, stage, seed)
    if not is_complete(directory):
        raise MissingArtifactError(
            f"Missing artifact: run the '{stage.split(':', 1)[0]}' stage first.",
            payload={"stage": stage, "seed": int(seed), "expected_path": os.path.join(directory, MANIFEST)},
        )
    files = read_manifest(directory)["files"]
    if key not in files:
        raise MissingArtifactError("Stage output lacks a file.", payload={"stage": stage, "key": key, "directory": directory})
    path = os.path.join(directory, files[key])
    if not os.path.exists(path):
        raise MissingArtifactError("Missing artifact file.", payload={"stage": stage, "expected_path": path})
    return path
