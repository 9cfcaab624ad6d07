"""Pure numpy fallback with the same call signatures as ``_ckernels``.

The SSC kernels walk the entry list in the same order as the compiled ones
(bias first, then entries by ascending channel slot and mask bit), vectorised
over the batch and output pixels. The dense kernels accumulate one tap at a
time through ``tensordot``.
"""

import numpy as np


def _window(a, u, v, Ho, Wo, stride):
    return a[..., u:u + stride * (Ho - 1) + 1:stride, v:v + stride * (Wo - 1) + 1:stride]


def ssc_forward(xpad, fptr, ch, ky, kx, w, bias, stride, out):
    B, N, Ho, Wo = out.shape
    out[...] = np.asarray(bias)[None, :, None, None]
    if B == 0 or Ho == 0 or Wo == 0:
        return
    for n in range(N):
        acc = out[:, n]
        for e in range(fptr[n], fptr[n + 1]):
            acc += w[e] * _window(xpad[:, ch[e]], ky[e], kx[e], Ho, Wo, stride)


def dense_forward(xpad, w, bias, stride, out):
    B, N, Ho, Wo = out.shape
    out[...] = np.asarray(bias)[None, :, None, None]
    if B == 0 or Ho == 0 or Wo == 0:
        return
    K = w.shape[2]
    for u in range(K):
        for v in range(K):
            xs = _window(xpad, u, v, Ho, Wo, stride)
            out += np.tensordot(xs, w[:, :, u, v], axes=([1], [1])).transpose(0, 3, 1, 2)


def ssc_backward_input(gout, cptr, corder, fil, ky, kx, w, stride, gxpad):
    gxpad[...] = 0
    Ho, Wo = gout.shape[2:]
    if gout.shape[0] == 0 or Ho == 0 or Wo == 0:
        return
    M = gxpad.shape[1]
    for c in range(M):
        dst = gxpad[:, c]
        for j in range(cptr[c], cptr[c + 1]):
            e = corder[j]
            _window(dst, ky[e], kx[e], Ho, Wo, stride)[...] += w[e] * gout[:, fil[e]]


def dense_backward_input(gout, w, stride, gxpad):
    gxpad[...] = 0
    Ho, Wo = gout.shape[2:]
    if gout.shape[0] == 0 or Ho == 0 or Wo == 0:
        return
    K = w.shape[2]
    for u in range(K):
        for v in range(K):
            contrib = np.tensordot(gout, w[:, :, u, v], axes=([1], [0]))
            _window(gxpad, u, v, Ho, Wo, stride)[...] += contrib.transpose(0, 3, 1, 2)


def ssc_backward_weight(gout, xpad, fptr, ch, ky, kx, stride, gw):
    B, N, Ho, Wo = gout.shape
    gw[...] = 0
    if B == 0 or Ho == 0 or Wo == 0:
        return
    for n in range(N):
        g = gout[:, n]
        for e in range(fptr[n], fptr[n + 1]):
            gw[e] = np.sum(g * _window(xpad[:, ch[e]], ky[e], kx[e], Ho, Wo, stride))


def dense_backward_weight(gout, xpad, stride, gw):
    B, N, Ho, Wo = gout.shape
    gw[...] = 0
    if B == 0 or Ho == 0 or Wo == 0:
        return
    K = gw.shape[2]
    for u in range(K):
        for v in range(K):
            xs = _window(xpad, u, v, Ho, Wo, stride)
            gw[:, :, u, v] = np.tensordot(gout, xs, axes=([0, 2, 3], [0, 2, 3]))
