from . import functional, nn
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .optim import AdamState, adam_step, derive_seed, init_module, init_normal
from .tensor import (
    GeometryError,
    Parameter,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    grad,
    no_grad,
)

__all__ = [
    "AdamState", "GeometryError", "Parameter", "ShapeError", "Tape", "TapeError", "Tensor",
    "adam_step", "backward", "derive_seed", "functional", "grad", "init_module", "init_normal",
    "load_checkpoint", "nn", "no_grad", "save_checkpoint",
]
