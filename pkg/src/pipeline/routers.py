"""
File: src/pipeline/routers.py
Task: Conditional edges. After every stage the run either continues with
the next stage or, when that stage recorded an error, jumps to "finish" so
the failure is reported instead of cascading.
"""

from typing import Callable

from .state import PipelineState

FINISH = "finish"


def has_error(state: PipelineState) -> bool:
    return bool(state.get("error"))


def route_next(next_stage: str) -> Callable[[PipelineState], str]:
    def route(state: PipelineState) -> str:
        return FINISH if has_error(state) else next_stage

    route.__name__ = f"route_to_{next_stage.replace('-', '_')}"
    return route
