"""Point cloud completion with selective state-space encoders and hyperpoints."""

from .config import ModelConfig, RunConfig
from .model import HyperComplete
from .tensor import Tensor, no_grad

__all__ = ["ModelConfig", "RunConfig", "HyperComplete", "Tensor", "no_grad"]
__version__ = "0.1.0"
