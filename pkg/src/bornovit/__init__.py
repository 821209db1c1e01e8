"""BornoViT: a lightweight vision transformer for handwritten character classification."""
from .errors import (BornoViTError, ConfigError, ContractError, DataError, FormatError,
                     ShapeError, TrainingAborted)
from .model import ModelConfig, ViTParams, adapt_head, forward, init_params, patch_embed, predict
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "BornoViTError", "ConfigError", "ContractError", "DataError", "FormatError", "ShapeError", "TrainingAborted",
    "ModelConfig", "ViTParams", "adapt_head", "forward", "init_params", "patch_embed", "predict",
    "Tensor", "backward", "no_grad",
]
