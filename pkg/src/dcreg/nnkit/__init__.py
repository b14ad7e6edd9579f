from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import CountNet, ModelSpec
from .optim import OptimState, adam_step
from .tensor import Tensor

__all__ = ["CheckpointError", "CountNet", "ModelSpec", "OptimState", "Tensor",
           "adam_step", "load_checkpoint", "save_checkpoint"]
