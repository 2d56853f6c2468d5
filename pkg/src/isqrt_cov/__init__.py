"""Covariance pooling with Newton-Schulz matrix square root normalization."""
from .cov_pool import covariance_backward, covariance_forward
from .isqrt_layer import (
    DegenerateInput,
    DivergenceError,
    IterationTape,
    LayerOutput,
    MetaLayerConfig,
    Mode,
    backward,
    backward_c,
    forward,
    forward_inference,
)
from .oracle_check import check_gradients, exact_sqrt

__all__ = [
    "DegenerateInput", "DivergenceError", "IterationTape", "LayerOutput", "MetaLayerConfig", "Mode",
    "backward", "backward_c", "check_gradients", "covariance_backward", "covariance_forward",
    "exact_sqrt", "forward", "forward_inference",
]
