from .losses import epsilon_loss, regression_loss, total_loss
from .model import VARIANTS, StiqaConfig, StiqaModel, assess
from .serialization import load_model, save_model
from .training import evaluate, split_indices, train, validation_set

__all__ = [
    "VARIANTS", "StiqaConfig", "StiqaModel", "assess", "epsilon_loss", "evaluate", "load_model",
    "regression_loss", "save_model", "split_indices", "total_loss", "train", "validation_set",
]
