from evoad.nn.model import (
    TrainConfig,
    TrainedModel,
    build_model,
    forward,
    get_weights,
    reconstruction_errors,
    reconstruction_loss,
    set_weights,
    train,
)
from evoad.nn.gradcheck import finite_diff_check

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "build_model",
    "forward",
    "get_weights",
    "set_weights",
    "train",
    "reconstruction_errors",
    "reconstruction_loss",
    "finite_diff_check",
]
