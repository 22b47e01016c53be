"""Self-labelling classification loss, a small numpy trainer and clustering metrics."""
from .errors import (
    BatchTooSmallError,
    ConfigError,
    DegenerateSliceError,
    DimensionError,
    DomainError,
    NonFiniteLossError,
    ParameterError,
    SelfClassifierError,
)
from .loss import LossConfig, ViewLogits, directional_loss, multihead_loss, multiview_loss, symmetric_loss
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "BatchTooSmallError", "ConfigError", "DegenerateSliceError", "DimensionError", "DomainError",
    "NonFiniteLossError", "ParameterError", "SelfClassifierError", "LossConfig", "ViewLogits",
    "Tensor", "directional_loss", "multihead_loss", "multiview_loss", "symmetric_loss",
]
