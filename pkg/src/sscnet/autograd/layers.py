"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward`` and returns
the input gradient from ``backward``, writing parameter gradients into its
:class:`Parameter` objects.
"""

from __future__ import annotations

import numpy as np

from ..layout import LayerLayout, LayerSpec, build_layer_layout
from ..tensorops import (ConvGeometry, SscWeights, conv2d_dense, conv2d_dense_backward,
                         conv2d_ssc, conv2d_ssc_backward)


class StaleGradientError(RuntimeError):
    pass


class Parameter:
    """A trainable array plus its gradient.

    ``fresh`` is set by the backward pass and cleared by the optimizer, so a
    second optimizer step without a new backward pass can be refused.
    """

    def __init__(self, name: str, value: np.ndarray, decay: bool = True,
                 trainable: bool = True, layout: LayerLayout | None = None):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.decay = decay
        self.trainable = trainable
        self.layout = layout  # set for compact SSC weights
        self.fresh = False

    def set_grad(self, g) -> None:
        g = np.asarray(g, dtype=self.value.dtype)
        if g.shape != self.value.shape:
            raise ValueError(f"{self.name}: gradient shape {g.shape} != value shape {self.value.shape}")
        self.grad[...] = g
        self.fresh = True

    def add_grad(self, g) -> None:
        if not self.fresh:
            raise StaleGradientError(f"{self.name}: adding to a gradient that was never set")
        self.grad += g

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


class Layer:
    name = "layer"

    def forward(self, x, train: bool = True):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def params(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def conv_layers(self) -> list["Layer"]:
        return []


def _he_uniform(rng, shape, fan_in, dtype):
    return (rng.uniform(-1.0, 1.0, shape) * np.sqrt(6.0 / fan_in)).astype(dtype)


class SscConv(Layer):
    """SSC convolution; weights live only at active mask positions."""

    kind = "ssc"

    def __init__(self, spec: LayerSpec, rng, geom: ConvGeometry | None = None,
                 bias: bool = False, dtype=np.float32, name: str = "ssc"):
        self.name = name
        self.layout = build_layer_layout(spec)
        self.geom = geom or ConvGeometry.same(spec.K)
        w = SscWeights.init(self.layout, rng, dtype=dtype, bias=bias)
        self.weight = Parameter(f"{name}.weight", w.values, layout=self.layout)
        self.bias = Parameter(f"{name}.bias", w.bias, decay=False) if bias else None
        self._w = w
        self._x = None

    @property
    def spec(self) -> LayerSpec:
        return self.layout.spec

    @property
    def weights(self) -> SscWeights:
        self._w.values = self.weight.value
        self._w.bias = None if self.bias is None else self.bias.value
        return self._w

    def forward(self, x, train=True):
        self._x = x
        return conv2d_ssc(x, self.weights, self.geom)

    def backward(self, gy):
        gx, gw, gb = conv2d_ssc_backward(self._x, self.weights, self.geom, gy)
        self.weight.set_grad(gw)
        if self.bias is not None:
            self.bias.set_grad(gb)
        return gx

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def conv_layers(self):
        return [self]

    def dense_weight(self) -> np.ndarray:
        return self.weights.dense()

    def project(self, dense_grad) -> np.ndarray:
        """Keep only the entries of a dense-shaped gradient on the support."""
        return np.asarray(dense_grad).reshape(-1)[self._w.plan.flat]


class DenseConv(Layer):
    kind = "dense"

    def __init__(self, M: int, N: int, K: int, rng, geom: ConvGeometry | None = None,
                 bias: bool = False, dtype=np.float32, name: str = "conv"):
        self.name = name
        self.geom = geom or ConvGeometry.same(K)
        self.shape = (N, M, K, K)
        self.weight = Parameter(f"{name}.weight", _he_uniform(rng, self.shape, M * K * K, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(N, dtype), decay=False) if bias else None
        self._x = None

    def forward(self, x, train=True):
        self._x = x
        b = None if self.bias is None else self.bias.value
        return conv2d_dense(x, self.weight.value, self.geom, bias=b)

    def backward(self, gy):
        gx, gw, gb = conv2d_dense_backward(self._x, self.weight.value, self.geom, gy)
        self.weight.set_grad(gw)
        if self.bias is not None:
            self.bias.set_grad(gb)
        return gx

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def conv_layers(self):
        return [self]

    def dense_weight(self) -> np.ndarray:
        return self.weight.value

    def project(self, dense_grad) -> np.ndarray:
        return np.asarray(dense_grad).reshape(self.shape)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, train=True):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, gy):
        return np.where(self._mask, gy, gy.dtype.type(0))


class MaxPool(Layer):
    """Non-overlapping ``k x k`` max pooling; ties send the gradient to the first max."""

    name = "maxpool"

    def __init__(self, k: int = 2):
        self.k = k

    def forward(self, x, train=True):
        B, C, H, W = x.shape
        k = self.k
        if H % k or W % k:
            raise ValueError(f"maxpool({k}) needs sizes divisible by {k}, got {H}x{W}")
        win = x.reshape(B, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(B, C, H // k, W // k, k * k)
        self._arg = win.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, gy):
        B, C, H, W = self._shape
        k = self.k
        g = np.zeros((B, C, H // k, W // k, k * k), dtype=gy.dtype)
        np.put_along_axis(g, self._arg[..., None], gy[..., None], axis=-1)
        g = g.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(g.reshape(B, C, H, W))


class AvgPool(Layer):
    """Non-overlapping ``k x k`` average pooling; ``k=None`` pools globally."""

    name = "avgpool"

    def __init__(self, k: int | None = 2):
        self.k = k

    def forward(self, x, train=True):
        B, C, H, W = x.shape
        self._shape = x.shape
        if self.k is None:
            return x.mean(axis=(2, 3), keepdims=True)
        k = self.k
        if H % k or W % k:
            raise ValueError(f"avgpool({k}) needs sizes divisible by {k}, got {H}x{W}")
        return x.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def backward(self, gy):
        B, C, H, W = self._shape
        if self.k is None:
            return np.broadcast_to(gy / (H * W), self._shape).astype(gy.dtype)
        k = self.k
        g = np.repeat(np.repeat(gy, k, axis=2), k, axis=3) / (k * k)
        return g.astype(gy.dtype)


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32, name: str = "fc"):
        self.name = name
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(f"{name}.weight",
                                (rng.uniform(-bound, bound, (n_out, n_in))).astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, dtype), decay=False)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[1]:
            raise ValueError(f"{self.name}: expected (B, {self.weight.value.shape[1]}), got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, gy):
        self.weight.set_grad(gy.T @ self._x)
        self.bias.set_grad(gy.sum(axis=0))
        return gy @ self.weight.value

    def params(self):
        return [self.weight, self.bias]


class BatchNorm(Layer):
    """Per-channel batch normalisation with running statistics (momentum 0.1)."""

    def __init__(self, C: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn"):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(C, dtype), decay=False)
        self.beta = Parameter(f"{name}.beta", np.zeros(C, dtype), decay=False)
        self.running_mean = np.zeros(C, dtype)
        self.running_var = np.ones(C, dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, train=True):
        shape = (1, -1) + (1,) * (x.ndim - 2)
        axes = (0,) + tuple(range(2, x.ndim))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // x.shape[1]
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            unbiased = var * (n / max(n - 1, 1))
            self.running_var[...] = (1 - m) * self.running_var + m * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        self._cache = (xhat, inv, shape, axes)
        return xhat * self.gamma.value.reshape(shape) + self.beta.value.reshape(shape)

    def backward(self, gy):
        xhat, inv, shape, axes = self._cache
        self.gamma.set_grad((gy * xhat).sum(axis=axes))
        self.beta.set_grad(gy.sum(axis=axes))
        g = gy * self.gamma.value.reshape(shape)
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (g - gm - xhat * gxm) * inv.reshape(shape)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class Sequential(Layer):
    def __init__(self, layers, name: str = "seq"):
        self.name = name
        self.layers = list(layers)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def conv_layers(self):
        return [c for layer in self.layers for c in layer.conv_layers()]


class Residual(Layer):
    """``relu(body(x) + shortcut(x))`` with a parameter-free shortcut.

    When the body halves the resolution or widens the channels, the shortcut
    subsamples by 2 and zero-pads the new channels.
    """

    def __init__(self, body: Sequential, in_ch: int, out_ch: int, stride: int,
                 name: str = "block"):
        self.name = name
        self.body = body
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.relu = ReLU()

    def _shortcut(self, x):
        if self.stride > 1:
            x = x[:, :, ::self.stride, ::self.stride]
        if self.out_ch > self.in_ch:
            pad = self.out_ch - self.in_ch
            x = np.pad(x, ((0, 0), (0, pad), (0, 0), (0, 0)))
        return x

    def forward(self, x, train=True):
        self._xshape = x.shape
        return self.relu.forward(self.body.forward(x, train) + self._shortcut(x), train)

    def backward(self, gy):
        g = self.relu.backward(gy)
        gx = self.body.backward(g)
        gs = g[:, :self.in_ch]
        if self.stride > 1:
            full = np.zeros(self._xshape, dtype=g.dtype)
            full[:, :, ::self.stride, ::self.stride] = gs
            gs = full
        return gx + gs

    def params(self):
        return self.body.params()

    def buffers(self):
        return self.body.buffers()

    def conv_layers(self):
        return self.body.conv_layers()
