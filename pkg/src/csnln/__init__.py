"""Cross-scale non-local attention for single-image super-resolution, on a
small numpy autodiff engine."""

from .attention import (AttentionParams, correlation_map, cross_scale_oracle, cross_scale_patch, cross_scale_pixel,
                        identity_attention, in_scale_nonlocal, init_attention, naive_cross_scale)
from .network import PAPER, TOY, ModelConfig, forward, init_csnln, preset
from .sem import init_sem, sem_forward
from .tensor import GradTape, Tensor, backward, finite_diff_check

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "GradTape", "ModelConfig", "PAPER", "TOY", "Tensor", "backward", "correlation_map",
    "cross_scale_oracle", "cross_scale_patch", "cross_scale_pixel", "finite_diff_check", "forward",
    "identity_attention", "in_scale_nonlocal", "init_attention", "init_csnln", "init_sem", "naive_cross_scale",
    "preset", "sem_forward",
]
