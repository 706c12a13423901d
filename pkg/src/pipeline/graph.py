"""
File: src/pipeline/graph.py
Mission: Assembles the LangGraph state machine for one CLI command. The
requested stages run in a fixed order; after each one a conditional edge
either moves on or, when the stage recorded an error, jumps to the finish
node so the failure is reported with its payload.
"""

from __future__ import annotations

from typing import Dict, Sequence

from langgraph.graph import StateGraph, START, END

from .state import PipelineState
from .nodes import (
    collect_node,
    evaluate_node,
    finetune_node,
    finish_node,
    fit_cem_node,
    pretrain_node,
    train_actnet_node,
    train_uan_node,
)
from .routers import FINISH, route_next

STAGES = ("collect", "train-uan", "fit-cem", "train-actnet", "pretrain", "finetune", "eval")

_NODES = {
    "collect": collect_node,
    "train-uan": train_uan_node,
    "fit-cem": fit_cem_node,
    "train-actnet": train_actnet_node,
    "pretrain": pretrain_node,
    "finetune": finetune_node,
    "eval": evaluate_node,
}

COMMAND_STAGES: Dict[str, Sequence[str]] = {
    "collect": ("collect",),
    "train-uan": ("train-uan",),
    "fit-cem": ("fit-cem",),
    "train-actnet": ("train-actnet",),
    "pretrain": ("pretrain",),
    "finetune": ("finetune",),
    "eval": ("eval",),
    "reproduce-figures": STAGES,
}


def build_graph(stages: Sequence[str]):
    """
    Linear graph over `stages` (kept in pipeline order):
      START -> s1 -> [router] -> s2 ... -> finish -> END
      any stage -> [router] -> finish when state["error"] is set
    """
    ordered = [s for s in STAGES if s in set(stages)]
    unknown = set(stages) - set(STAGES)
    if unknown or not ordered:
        raise ValueError(f"unknown or empty stage list: {sorted(unknown) or list(stages)}")

    g = StateGraph(PipelineState)
    for name in ordered:
        g.add_node(name, _NODES[name])
    g.add_node(FINISH, finish_node)

    g.add_edge(START, ordered[0])
    for here, nxt in zip(ordered, ordered[1:] + [FINISH]):
        g.add_conditional_edges(here, route_next(nxt), {nxt: nxt, FINISH: FINISH} if nxt != FINISH else {FINISH: FINISH})
    g.add_edge(FINISH, END)

    return g.compile()
