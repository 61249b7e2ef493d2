"""Minimal NumPy CNN engine: layers with manual backprop, Adam, training."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    flatten,
    maxpool_backward,
    maxpool_forward,
    mse_loss,
    relu_backward,
    relu_forward,
    softmax,
    softmax_xent,
)
from .model import (
    LayerSpec,
    ModelSpec,
    backward,
    classifier_spec,
    forward,
    init_params,
    reconstruction_spec,
)
from .optim import AdamState, adam_step
from .training import TrainConfig, TrainHistory, TrainingError, evaluate, predict, train

__all__ = [
    "AdamState", "CheckpointError", "LayerSpec", "ModelSpec", "TrainConfig",
    "TrainHistory", "TrainingError", "adam_step", "backward", "classifier_spec",
    "conv2d_backward", "conv2d_forward", "dense_backward", "dense_forward",
    "evaluate", "flatten", "forward", "init_params", "load_checkpoint",
    "maxpool_backward", "maxpool_forward", "mse_loss", "predict",
    "reconstruction_spec", "relu_backward", "relu_forward", "save_checkpoint",
    "softmax", "softmax_xent", "train",
]
