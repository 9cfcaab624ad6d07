"""Layer-wise reverse-mode differentiation and SGD training."""

from .archs import ARCHS, build_model
from .layers import (AvgPool, BatchNorm, DenseConv, Flatten, Layer, Linear, MaxPool, Parameter,
                     ReLU, Residual, Sequential, SscConv, StaleGradientError)
from .model import DivergenceError, Model, forward_backward, penalty_term, softmax_cross_entropy
from .optim import SGD, lr_at
from .penalties import OrthoPenalty, PenaltyMode, dso_penalty, so_penalty
from .train import (ConfigError, LayoutMismatchError, MetricsRecord, TrainConfig, TrainResult,
                    config_text, evaluate, load_config, load_model, metrics_csv, save_model,
                    train, transfer)

__all__ = [
    "ARCHS", "build_model", "AvgPool", "BatchNorm", "DenseConv", "Flatten", "Layer", "Linear",
    "MaxPool", "Parameter", "ReLU", "Residual", "Sequential", "SscConv", "StaleGradientError",
    "DivergenceError", "Model", "forward_backward", "penalty_term", "softmax_cross_entropy",
    "SGD", "lr_at", "OrthoPenalty", "PenaltyMode", "dso_penalty", "so_penalty", "ConfigError",
    "LayoutMismatchError", "MetricsRecord", "TrainConfig", "TrainResult", "config_text",
    "evaluate", "load_config", "load_model", "metrics_csv", "save_model", "train", "transfer",
]
