from .calibrate import fit_cem_node, train_actnet_node, train_uan_node
from .collect import collect_node
from .evaluate import evaluate_node
from .finish import finish_node
from .policy import finetune_node, pretrain_node

__all__ = [
    "collect_node",
    "train_uan_node",
    "fit_cem_node",
    "train_actnet_node",
    "pretrain_node",
    "finetune_node",
    "evaluate_node",
    "finish_node",
]
