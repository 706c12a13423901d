"""
File: src/pipeline/state.py
Task: Defines PipelineState, the shared memory of the LangGraph run. It holds
the resolved config and run options, the paths every finished stage
produced, the assembled report and, when a stage fails, the error that sends
the run straight to the finish node.
"""

from __future__ import annotations
from typing import TypedDict, List, Dict, Any, Optional, Tuple

from ..config import WorkbenchConfig
from ..evaluation.report import EvalReport
from ..sim.parallel import ShardPool


class PipelineState(TypedDict, total=False):
    # Inputs
    cfg: WorkbenchConfig
    command: str
    seed: int
    calib_seeds: List[int]
    # (variant, mode) pairs the finetune node trains
    finetune_jobs: List[Tuple[str, str]]
    # override PPO update counts (tests, smoke runs); None keeps the config
    updates: Optional[int]

    # Runtime only
    pool: ShardPool

    # Stage outputs: stage key -> directory
    artifacts: Dict[str, str]
    timing: Dict[str, float]

    # Evaluation
    report: EvalReport
    report_dir: str
    public_report: Dict[str, Any]

    # Failure: WorkbenchError.to_dict() of the stage that failed
    error: Dict[str, Any]
