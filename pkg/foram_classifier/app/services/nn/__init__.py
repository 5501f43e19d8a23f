# Classification head built on numpy: dense layers, optimizers, training and grid search
from .checkpoint import load_head, save_head
from .grid import GridEntry, GridResult, default_grid, grid_search
from .layers import ClassifierParams, DenseLayer, forward, loss_and_grads, predict_proba, softmax
from .optim import AdamState, adam_step, make_optimizer
from .training import TrainConfig, TrainReport, evaluate_accuracy, train

__all__ = [
    "AdamState",
    "ClassifierParams",
    "DenseLayer",
    "GridEntry",
    "GridResult",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "default_grid",
    "evaluate_accuracy",
    "forward",
    "grid_search",
    "load_head",
    "loss_and_grads",
    "make_optimizer",
    "predict_proba",
    "save_head",
    "softmax",
    "train",
]
