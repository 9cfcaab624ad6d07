"""Textbook depthwise, pointwise and grouped convolutions.

These are written against plain numpy windows and share no code with the
kernels, so they serve as an independent check of the SSC special cases.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..layout import LayerSpec


def _windows(x, K, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (K, K), axis=(2, 3))  # B, C, Ho', Wo', K, K
    return win[:, :, ::stride, ::stride]


def grouped_conv(x, w, groups: int, stride: int = 1, padding: int = 0, bias=None):
    """Grouped convolution with ``w`` of shape ``(N, M // groups, K, K)``.

    Output channels ``[j*N/G, (j+1)*N/G)`` see input channels
    ``[j*M/G, (j+1)*M/G)``.
    """
    B, M, H, W = x.shape
    N, Mg, K, _ = w.shape
    if M % groups or N % groups or Mg != M // groups:
        raise ValueError(f"bad grouped shapes x={x.shape} w={w.shape} groups={groups}")
    win = _windows(x, K, stride, padding)
    Ng = N // groups
    outs = []
    for j in range(groups):
        xs = win[:, j * Mg:(j + 1) * Mg]
        ws = w[j * Ng:(j + 1) * Ng]
        outs.append(np.einsum("bchwuv,ncuv->bnhw", xs, ws))
    out = np.concatenate(outs, axis=1)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return out


def depthwise_conv(x, w, stride: int = 1, padding: int = 0, bias=None):
    """``w`` has shape ``(M * mult, 1, K, K)``; filter ``n`` reads channel ``n // mult``."""
    return grouped_conv(x, w, x.shape[1], stride, padding, bias)


def pointwise_conv(x, w, bias=None):
    """1x1 convolution, ``w`` of shape ``(N, M)`` or ``(N, M, 1, 1)``."""
    w = np.asarray(w).reshape(w.shape[0], -1)
    out = np.einsum("bchw,nc->bnhw", x, w)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return out


def ssc_as_grouped(spec: LayerSpec, dense_w):
    """Rewrite a GWC-style SSC layer as a contiguous grouped convolution.

    Filter ``n`` of such a layer reads channels ``n mod g, n mod g + g, ...``.
    Returns ``(in_perm, out_perm, grouped_w)`` with the grouped convolution
    applied to ``x[:, in_perm]`` and its output channel ``j`` being SSC filter
    ``out_perm[j]``.
    """
    g, M, N = spec.g, spec.M, spec.N
    if spec.p != 0 or g < 1 or N % g:
        raise ValueError(f"{spec} is not expressible as a grouped convolution")
    in_perm = np.concatenate([np.arange(s, M, g) for s in range(g)])
    out_perm = np.concatenate([np.arange(s, N, g) for s in range(g)])
    Mg = M // g
    gw = np.empty((N, Mg) + dense_w.shape[2:], dtype=dense_w.dtype)
    for j, n in enumerate(out_perm):
        s = n % g
        gw[j] = dense_w[n, s::g]
    return in_perm, out_perm, gw


def ssc_special_case(spec: LayerSpec, x, dense_w, stride: int = 1, padding: int | None = None):
    """Evaluate a PWC / DWC / GWC-shaped SSC layer through the reference ops."""
    K = spec.K
    if padding is None:
        padding = (K - 1) // 2
    if spec.g == 0 and spec.p == 1:
        c = (K * K - 1) // 2
        w = dense_w.reshape(spec.N, spec.M, K * K)[:, :, c]
        off = (K - 1) // 2 - padding
        if off < 0:
            raise ValueError("pointwise reference needs padding <= (K - 1) // 2")
        Ho = _osize(x.shape[2], K, stride, padding)
        Wo = _osize(x.shape[3], K, stride, padding)
        xs = x[:, :, off::stride, off::stride][:, :, :Ho, :Wo]
        return pointwise_conv(xs, w)
    in_perm, out_perm, gw = ssc_as_grouped(spec, dense_w)
    y = grouped_conv(x[:, in_perm], gw, spec.g, stride, padding)
    out = np.empty_like(y)
    out[:, out_perm] = y
    return out


def _osize(n, K, stride, padding):
    return (n + 2 * padding - K) // stride + 1
