"""Minimal reverse-mode autodiff, layers, networks and Adam."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .kernels import ShapeError, conv2d_backward, conv2d_forward
from .nets import DiscNet, SegNet
from .optim import Adam, TrainingError, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "Adam",
    "CheckpointError",
    "DiscNet",
    "SegNet",
    "ShapeError",
    "Tensor",
    "TrainingError",
    "adam_step",
    "as_tensor",
    "conv2d_backward",
    "conv2d_forward",
    "load_checkpoint",
    "save_checkpoint",
]
