"""Minimal reverse-mode autodiff over numpy arrays."""

from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .optim import Adam, adam_step
from .tensor import Parameter, Tensor, concat, no_grad

__all__ = [
    "Adam",
    "CheckpointError",
    "Parameter",
    "Tensor",
    "adam_step",
    "concat",
    "finite_diff_check",
    "functional",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]
