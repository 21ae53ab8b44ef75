from .losses import TaskWeights, combined_loss, loss_l1, loss_l2, loss_l3, loss_total
from .model import ModelConfig, Outputs, backward, forward, init_params
from .training import (History, Metrics, StateEstimate, TrainHyper, TrainingDiverged,
                       check_network_gradients, estimate, evaluate, fitness, score, train)

__all__ = [
    "TaskWeights", "combined_loss", "loss_l1", "loss_l2", "loss_l3", "loss_total",
    "ModelConfig", "Outputs", "backward", "forward", "init_params",
    "History", "Metrics", "StateEstimate", "TrainHyper", "TrainingDiverged",
    "check_network_gradients", "estimate",
    "evaluate", "fitness", "score", "train",
]
