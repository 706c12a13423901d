from __future__ import annotations
from typing import Dict, Any
import logging

from ...evaluation.public_view import make_public_report
from ..state import PipelineState

logger = logging.getLogger(__name__)


def finish_node(state: PipelineState) -> Dict[str, Any]:
    """
    Final node, reached on success or straight from a failed stage.
    Produces the public summary of the report (or of the error).
    """
    tree: Dict[str, Any] = {}
    report = state.get("report")
    if report is not None:
        tree = report.tree()
    if state.get("error"):
        tree["error"] = state["error"]
        logger.error("run stopped at %s: %s", state["error"].get("stage"), state["error"].get("message"))
    public = make_public_report(tree)
    if state.get("report_dir"):
        public["report_dir"] = state["report_dir"]
    return {"public_report": public}
