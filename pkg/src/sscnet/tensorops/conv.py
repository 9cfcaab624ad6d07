"""Dense and SSC 2-D convolution (cross-correlation, zero padding).

Activations are plain ``(batch, channels, height, width)`` numpy arrays in
float32 or float64. SSC weights are stored compactly: one value per active
mask bit, ordered by filter, then ascending channel slot, then ascending mask
bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..layout import LayerLayout, LayerSpec, build_layer_layout
from . import _backend

FLOAT_TYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


@dataclass(frozen=True)
class ConvGeometry:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid geometry stride={self.stride} padding={self.padding}")

    @classmethod
    def same(cls, K: int, stride: int = 1) -> "ConvGeometry":
        return cls(stride, (K - 1) // 2)

    def output_size(self, size: int, K: int) -> int:
        out = (size + 2 * self.padding - K) // self.stride + 1
        if out < 1:
            raise ShapeError(f"input size {size} too small for K={K} with {self}")
        return out


def as_tensor4(x, dtype=None) -> np.ndarray:
    """Validate an activation tensor and return it C-contiguous."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D (B, C, H, W) tensor, got shape {x.shape}")
    if dtype is None:
        dtype = x.dtype if x.dtype in FLOAT_TYPES else np.float64
    if np.dtype(dtype) not in FLOAT_TYPES:
        raise TypeError(f"unsupported precision {dtype}")
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.size and not np.isfinite(x).all():
        raise NonFiniteError("tensor contains NaN or Inf")
    return x


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


# --------------------------------------------------------------------------
# compact SSC weights


@dataclass(frozen=True, eq=False)
class ConvPlan:
    """Index arrays describing the active weights of a layer.

    ``fptr`` splits entries by filter. ``corder``/``cptr`` give the same
    entries grouped by input channel (ascending filter, then tap) for the
    input-gradient scatter.
    """

    N: int
    M: int
    K: int
    fptr: np.ndarray
    ch: np.ndarray
    ky: np.ndarray
    kx: np.ndarray
    fil: np.ndarray
    cptr: np.ndarray
    corder: np.ndarray
    flat: np.ndarray  # position of each entry in a dense N*M*K*K tensor

    @property
    def size(self) -> int:
        return len(self.ch)


def _make_plan(support: np.ndarray, K: int) -> ConvPlan:
    N, M, KK = support.shape
    n, c, t = np.nonzero(support)  # row-major: filter, channel, tap
    counts = np.bincount(n, minlength=N)
    fptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    corder = np.lexsort((t, n, c)).astype(np.int32)
    ccounts = np.bincount(c, minlength=M)
    cptr = np.concatenate([[0], np.cumsum(ccounts)]).astype(np.int32)
    i32 = lambda a: np.ascontiguousarray(a, dtype=np.int32)  # noqa: E731
    return ConvPlan(N, M, K, fptr, i32(c), i32(t // K), i32(t % K), i32(n), cptr,
                    corder, (n * M * KK + c * KK + t).astype(np.int64))


@lru_cache(maxsize=512)
def plan_for(spec: LayerSpec) -> ConvPlan:
    layout = build_layer_layout(spec)
    return _make_plan(layout.support, spec.K)


class SscWeights:
    """Compact weights of one SSC layer plus an optional bias."""

    def __init__(self, layout: LayerLayout | LayerSpec, values, bias=None):
        if isinstance(layout, LayerSpec):
            layout = build_layer_layout(layout)
        self.layout = layout
        self.plan = plan_for(layout.spec)
        values = np.asarray(values)
        if values.ndim != 1 or values.shape[0] != self.plan.size:
            raise ShapeError(f"layout has {self.plan.size} active weights, got "
                             f"values of shape {values.shape}")
        if values.dtype not in FLOAT_TYPES:
            values = values.astype(np.float64)
        self.values = np.ascontiguousarray(values)
        if bias is not None:
            bias = np.ascontiguousarray(bias, dtype=self.values.dtype)
            if bias.shape != (layout.spec.N,):
                raise ShapeError(f"bias must have shape ({layout.spec.N},), got {bias.shape}")
        self.bias = bias

    @property
    def spec(self) -> LayerSpec:
        return self.layout.spec

    @property
    def dtype(self):
        return self.values.dtype

    def dense(self) -> np.ndarray:
        """Decompress to ``(N, M, K, K)`` with exact zeros off the support."""
        s = self.spec
        out = np.zeros(s.N * s.M * s.K * s.K, dtype=self.values.dtype)
        out[self.plan.flat] = self.values
        return out.reshape(s.N, s.M, s.K, s.K)

    def filter_values(self, n: int) -> np.ndarray:
        return self.values[self.plan.fptr[n]:self.plan.fptr[n + 1]]

    def astype(self, dtype) -> "SscWeights":
        b = None if self.bias is None else self.bias.astype(dtype)
        return SscWeights(self.layout, self.values.astype(dtype), b)

    @classmethod
    def from_dense(cls, layout: LayerLayout | LayerSpec, dense, bias=None) -> "SscWeights":
        """Compress a dense tensor, dropping everything off the support."""
        if isinstance(layout, LayerSpec):
            layout = build_layer_layout(layout)
        s = layout.spec
        dense = np.asarray(dense)
        if dense.shape != (s.N, s.M, s.K, s.K):
            raise ShapeError(f"expected dense weights {(s.N, s.M, s.K, s.K)}, got {dense.shape}")
        return cls(layout, dense.reshape(-1)[plan_for(s).flat].copy(), bias)

    @classmethod
    def init(cls, layout: LayerLayout | LayerSpec, rng: np.random.Generator,
             dtype=np.float32, bias: bool = False) -> "SscWeights":
        """He-uniform values with fan-in counted over each filter's support."""
        if isinstance(layout, LayerSpec):
            layout = build_layer_layout(layout)
        plan = plan_for(layout.spec)
        fan_in = np.diff(plan.fptr)[plan.fil]
        bound = np.sqrt(6.0 / fan_in)
        values = (rng.uniform(-1.0, 1.0, plan.size) * bound).astype(dtype)
        b = np.zeros(layout.spec.N, dtype=dtype) if bias else None
        return cls(layout, values, b)


# --------------------------------------------------------------------------
# convolution


def _check_dense_weights(x, w):
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"weights must be (N, M, K, K), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")


def _out_shape(x, N, K, geom):
    B, _, H, W = x.shape
    return (B, N, geom.output_size(H, K), geom.output_size(W, K))


def _bias_or_zeros(bias, N, dtype):
    if bias is None:
        return np.zeros(N, dtype=dtype)
    bias = np.ascontiguousarray(bias, dtype=dtype)
    if bias.shape != (N,):
        raise ShapeError(f"bias must have shape ({N},), got {bias.shape}")
    return bias


def conv2d_dense(x, w, geom: ConvGeometry | None = None, bias=None,
                 backend: str | None = None) -> np.ndarray:
    """Standard dense convolution over all ``M`` channels and ``K x K`` taps."""
    x = as_tensor4(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    _check_dense_weights(x, w)
    N, _, K, _ = w.shape
    geom = geom or ConvGeometry.same(K)
    out = np.empty(_out_shape(x, N, K, geom), dtype=x.dtype)
    _backend.kernels(backend).dense_forward(
        _pad(x, geom.padding), w, _bias_or_zeros(bias, N, x.dtype), geom.stride, out)
    return out


def conv2d_dense_backward(x, w, geom: ConvGeometry | None, grad_out,
                          backend: str | None = None):
    """Gradients ``(grad_x, grad_w, grad_bias)`` of the dense convolution."""
    x = as_tensor4(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    _check_dense_weights(x, w)
    N, _, K, _ = w.shape
    geom = geom or ConvGeometry.same(K)
    grad_out = np.ascontiguousarray(grad_out, dtype=x.dtype)
    if grad_out.shape != _out_shape(x, N, K, geom):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match the forward output")
    k = _backend.kernels(backend)
    xpad = _pad(x, geom.padding)
    gxpad = np.empty_like(xpad)
    k.dense_backward_input(grad_out, w, geom.stride, gxpad)
    gw = np.empty_like(w)
    k.dense_backward_weight(grad_out, xpad, geom.stride, gw)
    gb = grad_out.sum(axis=(0, 2, 3))
    return _crop(gxpad, x.shape, geom.padding), gw, gb


def _crop(gxpad, shape, pad):
    if pad == 0:
        return gxpad
    H, W = shape[2:]
    return np.ascontiguousarray(gxpad[:, :, pad:pad + H, pad:pad + W])


def _check_ssc(x, ssc_w: SscWeights):
    if not isinstance(ssc_w, SscWeights):
        raise TypeError("expected SscWeights")
    if x.shape[1] != ssc_w.spec.M:
        raise ShapeError(f"input has {x.shape[1]} channels, layout expects {ssc_w.spec.M}")
    if ssc_w.values.shape[0] != ssc_w.plan.size:
        raise ShapeError("weight count does not match the layout")


def conv2d_masked_oracle(x, ssc_w: SscWeights, geom: ConvGeometry | None = None,
                         backend: str | None = None) -> np.ndarray:
    """Ground truth: decompress to dense (structural zeros included), then convolve."""
    x = as_tensor4(x)
    _check_ssc(x, ssc_w)
    return conv2d_dense(x, ssc_w.dense(), geom, ssc_w.bias, backend=backend)


def conv2d_ssc(x, ssc_w: SscWeights, geom: ConvGeometry | None = None,
               backend: str | None = None, plan: ConvPlan | None = None) -> np.ndarray:
    """SSC convolution touching only non-empty slots and active mask bits."""
    x = as_tensor4(x)
    _check_ssc(x, ssc_w)
    s = ssc_w.spec
    plan = plan or ssc_w.plan
    geom = geom or ConvGeometry.same(s.K)
    out = np.empty(_out_shape(x, s.N, s.K, geom), dtype=x.dtype)
    _backend.kernels(backend).ssc_forward(
        _pad(x, geom.padding), plan.fptr, plan.ch, plan.ky, plan.kx,
        np.ascontiguousarray(ssc_w.values, dtype=x.dtype),
        _bias_or_zeros(ssc_w.bias, s.N, x.dtype), geom.stride, out)
    return out


def conv2d_ssc_backward(x, ssc_w: SscWeights, geom: ConvGeometry | None, grad_out,
                        backend: str | None = None):
    """Gradients ``(grad_x, grad_w_compact, grad_bias)``.

    ``grad_w_compact`` has one entry per active weight; ``grad_bias`` is
    ``None`` when the layer has no bias.
    """
    x = as_tensor4(x)
    _check_ssc(x, ssc_w)
    s = ssc_w.spec
    plan = ssc_w.plan
    geom = geom or ConvGeometry.same(s.K)
    grad_out = np.ascontiguousarray(grad_out, dtype=x.dtype)
    if grad_out.shape != _out_shape(x, s.N, s.K, geom):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match the forward output")
    k = _backend.kernels(backend)
    w = np.ascontiguousarray(ssc_w.values, dtype=x.dtype)
    xpad = _pad(x, geom.padding)
    gxpad = np.empty_like(xpad)
    k.ssc_backward_input(grad_out, plan.cptr, plan.corder, plan.fil, plan.ky, plan.kx,
                         w, geom.stride, gxpad)
    gw = np.empty(plan.size, dtype=x.dtype)
    k.ssc_backward_weight(grad_out, xpad, plan.fptr, plan.ch, plan.ky, plan.kx,
                          geom.stride, gw)
    gb = None if ssc_w.bias is None else grad_out.sum(axis=(0, 2, 3))
    return _crop(gxpad, x.shape, geom.padding), gw, gb
