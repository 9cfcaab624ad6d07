"""Convolution kernels: dense reference, masked-dense oracle and SSC path."""

from ._backend import DEFAULT as DEFAULT_BACKEND
from ._backend import available as available_backends
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .conv import (ConvGeometry, ConvPlan, NonFiniteError, ShapeError, SscWeights, as_tensor4,
                   conv2d_dense, conv2d_dense_backward, conv2d_masked_oracle,
                   conv2d_ssc, conv2d_ssc_backward, plan_for)

__all__ = [
    "DEFAULT_BACKEND", "available_backends", "CheckpointError", "load_checkpoint",
    "save_checkpoint", "ConvGeometry", "ConvPlan", "NonFiniteError", "ShapeError", "SscWeights",
    "as_tensor4", "conv2d_dense", "conv2d_dense_backward", "conv2d_masked_oracle",
    "conv2d_ssc", "conv2d_ssc_backward", "plan_for",
]
