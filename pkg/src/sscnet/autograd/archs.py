"""Small CNNs with interchangeable SSC or dense convolutions.

The stem convolution is always dense: with 1 or 3 input channels there is no
room for a useful slot pattern.
"""

from __future__ import annotations

import numpy as np

from ..layout import LayerSpec
from ..rng import stream
from ..tensorops import ConvGeometry
from .layers import (AvgPool, BatchNorm, DenseConv, Flatten, Linear, MaxPool, ReLU, Residual,
                     Sequential, SscConv)
from .model import Model

ARCHS = ("mnist_cnn4", "resnet8", "tiny")


class _Builder:
    def __init__(self, conv: str, g: int, p: int, parity_policy: str, seed: int, dtype):
        if conv not in ("ssc", "dense"):
            raise ValueError(f"conv must be 'ssc' or 'dense', got {conv!r}")
        self.conv, self.g, self.p, self.policy = conv, g, p, parity_policy
        self.seed, self.dtype = seed, dtype
        self.count = 0

    def rng(self):
        self.count += 1
        return stream(self.seed, "init", self.count)

    def conv_layer(self, M, N, K=3, stride=1, name="conv", force_dense=False):
        geom = ConvGeometry(stride, (K - 1) // 2)
        rng = self.rng()
        if self.conv == "dense" or force_dense:
            return DenseConv(M, N, K, rng, geom, dtype=self.dtype, name=name)
        spec = LayerSpec(M, N, K, self.g, self.p, self.policy)
        return SscConv(spec, rng, geom, dtype=self.dtype, name=name)

    def linear(self, n_in, n_out, name="fc"):
        return Linear(n_in, n_out, self.rng(), dtype=self.dtype, name=name)


def mnist_cnn4(b: _Builder, in_ch, num_classes, size, width=8):
    w1, w2, w3 = width, 2 * width, 4 * width
    layers = [
        b.conv_layer(in_ch, w1, name="conv1", force_dense=True), BatchNorm(w1, b.dtype, name="bn1"), ReLU(),
        b.conv_layer(w1, w2, name="conv2"), BatchNorm(w2, b.dtype, name="bn2"), ReLU(),
        MaxPool(2),
        b.conv_layer(w2, w2, name="conv3"), BatchNorm(w2, b.dtype, name="bn3"), ReLU(),
        b.conv_layer(w2, w3, name="conv4"), BatchNorm(w3, b.dtype, name="bn4"), ReLU(),
        MaxPool(2),
        Flatten(),
        b.linear(w3 * (size // 4) ** 2, num_classes, name="fc"),
    ]
    return Sequential(layers)


def _block(b: _Builder, cin, cout, stride, name):
    body = Sequential([
        b.conv_layer(cin, cout, stride=stride, name=f"{name}.conv1"),
        BatchNorm(cout, b.dtype, name=f"{name}.bn1"), ReLU(),
        b.conv_layer(cout, cout, name=f"{name}.conv2"),
        BatchNorm(cout, b.dtype, name=f"{name}.bn2"),
    ])
    return Residual(body, cin, cout, stride, name=name)


def resnet8(b: _Builder, in_ch, num_classes, size, width=8):
    w = width
    layers = [
        b.conv_layer(in_ch, w, name="stem", force_dense=True), BatchNorm(w, b.dtype, name="stem_bn"), ReLU(),
        _block(b, w, w, 1, "block1"),
        _block(b, w, 2 * w, 2, "block2"),
        _block(b, 2 * w, 4 * w, 2, "block3"),
        AvgPool(None), Flatten(),
        b.linear(4 * w, num_classes, name="fc"),
    ]
    return Sequential(layers)


def tiny(b: _Builder, in_ch, num_classes, size, width=4):
    layers = [
        b.conv_layer(in_ch, width, name="conv1", force_dense=True), ReLU(),
        b.conv_layer(width, 2 * width, name="conv2"), ReLU(),
        AvgPool(None), Flatten(),
        b.linear(2 * width, num_classes, name="fc"),
    ]
    return Sequential(layers)


_BUILDERS = {"mnist_cnn4": mnist_cnn4, "resnet8": resnet8, "tiny": tiny}


def build_model(arch: str, conv: str = "ssc", g: int = 2, p: int = 2,
                parity_policy: str = "block_halves", in_channels: int = 1,
                num_classes: int = 10, image_size: int = 28, width: int | None = None,
                seed: int = 0, dtype: str = "float32") -> Model:
    if arch not in _BUILDERS:
        raise ValueError(f"unknown arch {arch!r}; have {list(ARCHS)}")
    b = _Builder(conv, g, p, parity_policy, seed, np.dtype(dtype).type)
    kw = {} if width is None else {"width": width}
    body = _BUILDERS[arch](b, in_channels, num_classes, image_size, **kw)
    meta = dict(arch=arch, conv=conv, g=g, p=p, parity_policy=parity_policy,
                in_channels=in_channels, num_classes=num_classes, image_size=image_size,
                width=width, seed=seed, dtype=np.dtype(dtype).name)
    model = Model(body, meta)
    model.meta["ssc_specs"] = {c.name: c.spec.to_dict() for c in model.ssc_layers()}
    return model
