from .io import ModelFormatError, load_model, save_model
from .layers import conv3d_backward, conv3d_forward
from .model import (
    FULL_CHANNELS,
    Architecture,
    ArchitectureMismatch,
    LayerSpec,
    ModelWeights,
    backward,
    forward,
    init_weights,
    layer_chain,
    mse_grad,
    mse_loss,
    predict,
)
from .optim import AdadeltaState, adadelta_step
from .train import TrainConfig, TrainingDiverged, train

__all__ = [
    "FULL_CHANNELS",
    "AdadeltaState",
    "Architecture",
    "ArchitectureMismatch",
    "LayerSpec",
    "ModelFormatError",
    "ModelWeights",
    "TrainConfig",
    "TrainingDiverged",
    "adadelta_step",
    "backward",
    "conv3d_backward",
    "conv3d_forward",
    "forward",
    "init_weights",
    "layer_chain",
    "load_model",
    "mse_grad",
    "mse_loss",
    "predict",
    "save_model",
    "train",
]
