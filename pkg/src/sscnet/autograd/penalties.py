"""Soft orthogonality penalties on filter matrices.

``W`` is ``J x N`` with one flattened filter per column. For SSC layers the
columns are the decompressed filters, and the caller projects the gradient
back onto the active positions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class PenaltyMode(str, enum.Enum):
    NONE = "none"
    SO = "so"
    DSO = "dso"


@dataclass(frozen=True)
class OrthoPenalty:
    mode: PenaltyMode = PenaltyMode.NONE
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", PenaltyMode(self.mode))
        if not self.lam >= 0:
            raise ValueError(f"penalty coefficient must be >= 0, got {self.lam}")

    def __call__(self, W):
        if self.mode is PenaltyMode.SO:
            return so_penalty(W, self.lam)
        if self.mode is PenaltyMode.DSO:
            return dso_penalty(W, self.lam)
        return 0.0, np.zeros_like(W)


def so_penalty(W, lam: float):
    """``lam * ||W^T W - I||_F^2`` and its gradient ``4 lam W (W^T W - I)``."""
    W = np.asarray(W)
    D = W.T @ W - np.eye(W.shape[1], dtype=W.dtype)
    return lam * float(np.sum(D * D)), 4.0 * lam * (W @ D)


def dso_penalty(W, lam: float):
    """SO plus the row term ``lam * ||W W^T - I||_F^2``."""
    W = np.asarray(W)
    loss, grad = so_penalty(W, lam)
    E = W @ W.T - np.eye(W.shape[0], dtype=W.dtype)
    return loss + lam * float(np.sum(E * E)), grad + 4.0 * lam * (E @ W)
