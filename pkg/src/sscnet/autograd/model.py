"""Sequential model, softmax cross-entropy head and the training step."""

from __future__ import annotations

import numpy as np

from ..tensorops import NonFiniteError
from .layers import Layer, Parameter, Sequential
from .penalties import OrthoPenalty, PenaltyMode


class DivergenceError(FloatingPointError):
    pass


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(B), labels]))
    g = np.exp(z - lse[:, None])
    g[np.arange(B), labels] -= 1
    return loss, (g / B).astype(logits.dtype)


class Model:
    def __init__(self, body: Sequential, meta: dict | None = None):
        self.body = body
        self.meta = dict(meta or {})

    def forward(self, x, train: bool = True):
        return self.body.forward(x, train)

    def backward(self, g):
        return self.body.backward(g)

    def params(self) -> list[Parameter]:
        return self.body.params()

    def named_params(self) -> dict[str, Parameter]:
        out = {}
        for p in self.params():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return self.body.buffers()

    def conv_layers(self) -> list[Layer]:
        return self.body.conv_layers()

    def ssc_layers(self):
        return [c for c in self.conv_layers() if c.kind == "ssc"]

    def predict(self, x, batch_size: int = 512):
        return np.concatenate([self.forward(x[i:i + batch_size], train=False)
                               for i in range(0, len(x), batch_size)])


def penalty_term(model: Model, penalty: OrthoPenalty | None, add_grads: bool = True) -> float:
    """Sum the orthogonality penalty over every conv layer of ``model``.

    SSC gradients are projected onto the active positions.
    """
    if penalty is None or penalty.mode is PenaltyMode.NONE:
        return 0.0
    total = 0.0
    for layer in model.conv_layers():
        dw = layer.dense_weight()
        N = dw.shape[0]
        W = dw.reshape(N, -1).T
        loss, gW = penalty(W)
        total += loss
        if add_grads:
            layer.weight.add_grad(layer.project(gW.T.reshape(dw.shape)))
    return total


def forward_backward(model: Model, x, labels, penalty: OrthoPenalty | None = None):
    """One training pass: ``(loss, accuracy)`` with every gradient populated."""
    # overflow is caught by the finiteness checks, so numpy's warnings add nothing
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            logits = model.forward(x, train=True)
            loss, g = softmax_cross_entropy(logits, labels)
            model.backward(g)
            loss += penalty_term(model, penalty)
    except NonFiniteError as e:
        raise DivergenceError(f"non-finite activations: {e}") from None
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    acc = float(np.mean(logits.argmax(axis=1) == labels))
    return loss, acc
