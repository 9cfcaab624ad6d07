# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled direct-convolution kernels.

Two families live here: the dense kernels walk every (channel, tap) of an
``N x M x K x K`` weight tensor, the SSC kernels walk a compact entry list
(one entry per active weight, grouped by filter). Both use the same
axpy-over-shifted-plane inner loop so their per-MAC cost is comparable.

Inputs are pre-padded. Work is split across output planes only, and every
output element is accumulated in a fixed order, so results are independent
of the OpenMP thread count.
"""

from cython.parallel cimport parallel, prange
from libc.stdlib cimport free, malloc
from libc.string cimport memset

ctypedef fused real:
    float
    double


cdef inline void _axpy_plane(real* dst, const real* src, real wv,
                             Py_ssize_t Ho, Py_ssize_t Wo, Py_ssize_t Wp,
                             int stride) noexcept nogil:
    # dst is laid out with row pitch Wp when stride == 1 (long contiguous
    # sweep, junk columns discarded later), row pitch Wo otherwise.
    cdef Py_ssize_t i, y, x, L
    cdef const real* row
    cdef real* drow
    if stride == 1:
        L = (Ho - 1) * Wp + Wo
        for i in range(L):
            dst[i] += wv * src[i]
    else:
        for y in range(Ho):
            row = src + y * stride * Wp
            drow = dst + y * Wo
            for x in range(Wo):
                drow[x] += wv * row[x * stride]


cdef inline void _store_plane(real* out, const real* buf, Py_ssize_t Ho,
                              Py_ssize_t Wo, Py_ssize_t Wp,
                              int stride) noexcept nogil:
    cdef Py_ssize_t y, x, pitch
    pitch = Wp if stride == 1 else Wo
    for y in range(Ho):
        for x in range(Wo):
            out[y * Wo + x] = buf[y * pitch + x]


cdef inline void _scatter_plane(real* dst, const real* g, real wv,
                                Py_ssize_t Ho, Py_ssize_t Wo, Py_ssize_t Wp,
                                int stride) noexcept nogil:
    # stride 1: g is a pitch-Wp plane whose junk columns are zero.
    cdef Py_ssize_t i, y, x, L
    cdef real* row
    cdef const real* grow
    if stride == 1:
        L = (Ho - 1) * Wp + Wo
        for i in range(L):
            dst[i] += wv * g[i]
    else:
        for y in range(Ho):
            row = dst + y * stride * Wp
            grow = g + y * Wo
            for x in range(Wo):
                row[x * stride] += wv * grow[x]


cdef inline real _dot_plane(const real* g, const real* src, Py_ssize_t Ho,
                            Py_ssize_t Wo, Py_ssize_t Wp,
                            int stride) noexcept nogil:
    cdef Py_ssize_t i, y, x, L
    cdef const real* row
    cdef const real* grow
    cdef real s = 0
    if stride == 1:
        L = (Ho - 1) * Wp + Wo
        for i in range(L):
            s += g[i] * src[i]
    else:
        for y in range(Ho):
            row = src + y * stride * Wp
            grow = g + y * Wo
            for x in range(Wo):
                s += grow[x] * row[x * stride]
    return s


cdef real* _pitched_grad(const real[:, :, :, ::1] gout, Py_ssize_t Wp,
                         int stride) noexcept nogil:
    # Copy of gout with row pitch Wp (zeroed junk columns) for stride 1;
    # a plain copy otherwise.
    cdef Py_ssize_t B = gout.shape[0], N = gout.shape[1]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    cdef Py_ssize_t pitch = Wp if stride == 1 else Wo
    cdef Py_ssize_t plane = Ho * pitch
    cdef Py_ssize_t t, y, x
    cdef real* buf = <real*> malloc(B * N * plane * sizeof(real) + sizeof(real))
    cdef real* dst
    for t in prange(B * N, schedule="static"):
        dst = buf + t * plane
        for y in range(Ho):
            for x in range(Wo):
                dst[y * pitch + x] = gout[t // N, t % N, y, x]
            for x in range(Wo, pitch):
                dst[y * pitch + x] = 0
    return buf


def ssc_forward(const real[:, :, :, ::1] xpad, const int[::1] fptr,
                const int[::1] ch, const int[::1] ky, const int[::1] kx,
                const real[::1] w, const real[::1] bias, int stride,
                real[:, :, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], N = out.shape[1]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t Wp = xpad.shape[3]
    cdef Py_ssize_t L, t, b, n, e, i
    cdef real* buf
    if B == 0 or N == 0 or Ho == 0 or Wo == 0:
        return
    L = (Ho - 1) * Wp + Wo if stride == 1 else Ho * Wo
    with nogil, parallel():
        buf = <real*> malloc(L * sizeof(real))
        for t in prange(B * N, schedule="static"):
            b = t // N
            n = t % N
            for i in range(L):
                buf[i] = bias[n]
            for e in range(fptr[n], fptr[n + 1]):
                _axpy_plane(buf, &xpad[b, ch[e], ky[e], kx[e]], w[e],
                            Ho, Wo, Wp, stride)
            _store_plane(&out[b, n, 0, 0], buf, Ho, Wo, Wp, stride)
        free(buf)


def dense_forward(const real[:, :, :, ::1] xpad, const real[:, :, :, ::1] w,
                  const real[::1] bias, int stride, real[:, :, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], N = out.shape[1]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t M = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t Wp = xpad.shape[3]
    cdef Py_ssize_t L, t, b, n, c, u, v, i
    cdef real* buf
    if B == 0 or N == 0 or Ho == 0 or Wo == 0:
        return
    L = (Ho - 1) * Wp + Wo if stride == 1 else Ho * Wo
    with nogil, parallel():
        buf = <real*> malloc(L * sizeof(real))
        for t in prange(B * N, schedule="static"):
            b = t // N
            n = t % N
            for i in range(L):
                buf[i] = bias[n]
            for c in range(M):
                for u in range(K):
                    for v in range(K):
                        _axpy_plane(buf, &xpad[b, c, u, v], w[n, c, u, v],
                                    Ho, Wo, Wp, stride)
            _store_plane(&out[b, n, 0, 0], buf, Ho, Wo, Wp, stride)
        free(buf)


def ssc_backward_input(const real[:, :, :, ::1] gout, const int[::1] cptr,
                       const int[::1] corder, const int[::1] fil,
                       const int[::1] ky, const int[::1] kx,
                       const real[::1] w, int stride,
                       real[:, :, :, ::1] gxpad):
    """Scatter ``gout`` back through the active weights into ``gxpad``.

    ``corder`` lists entry ids grouped by input channel (``cptr`` holds the
    group offsets), so each padded input plane is owned by one worker.
    """
    cdef Py_ssize_t B = gxpad.shape[0], M = gxpad.shape[1]
    cdef Py_ssize_t Hp = gxpad.shape[2], Wp = gxpad.shape[3]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    cdef Py_ssize_t N = gout.shape[1]
    cdef Py_ssize_t plane = Ho * (Wp if stride == 1 else Wo)
    cdef Py_ssize_t t, b, c, j, e
    cdef real* dst
    cdef real* g
    if B == 0 or M == 0:
        return
    with nogil:
        g = _pitched_grad(gout, Wp, stride)
        for t in prange(B * M, schedule="static"):
            b = t // M
            c = t % M
            dst = &gxpad[b, c, 0, 0]
            memset(dst, 0, Hp * Wp * sizeof(real))
            if Ho == 0 or Wo == 0:
                continue
            for j in range(cptr[c], cptr[c + 1]):
                e = corder[j]
                _scatter_plane(dst + ky[e] * Wp + kx[e],
                               g + (b * N + fil[e]) * plane,
                               w[e], Ho, Wo, Wp, stride)
        free(g)


def dense_backward_input(const real[:, :, :, ::1] gout,
                         const real[:, :, :, ::1] w, int stride,
                         real[:, :, :, ::1] gxpad):
    cdef Py_ssize_t B = gxpad.shape[0], M = gxpad.shape[1]
    cdef Py_ssize_t Hp = gxpad.shape[2], Wp = gxpad.shape[3]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    cdef Py_ssize_t N = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t plane = Ho * (Wp if stride == 1 else Wo)
    cdef Py_ssize_t t, b, c, n, u, v
    cdef real* dst
    cdef real* g
    if B == 0 or M == 0:
        return
    with nogil:
        g = _pitched_grad(gout, Wp, stride)
        for t in prange(B * M, schedule="static"):
            b = t // M
            c = t % M
            dst = &gxpad[b, c, 0, 0]
            memset(dst, 0, Hp * Wp * sizeof(real))
            if Ho == 0 or Wo == 0:
                continue
            for n in range(N):
                for u in range(K):
                    for v in range(K):
                        _scatter_plane(dst + u * Wp + v, g + (b * N + n) * plane,
                                       w[n, c, u, v], Ho, Wo, Wp, stride)
        free(g)


def ssc_backward_weight(const real[:, :, :, ::1] gout,
                        const real[:, :, :, ::1] xpad, const int[::1] fptr,
                        const int[::1] ch, const int[::1] ky,
                        const int[::1] kx, int stride, real[::1] gw):
    cdef Py_ssize_t B = gout.shape[0], N = gout.shape[1]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    cdef Py_ssize_t Wp = xpad.shape[3]
    cdef Py_ssize_t plane = Ho * (Wp if stride == 1 else Wo)
    cdef Py_ssize_t n, b, e
    cdef real* g
    with nogil:
        g = _pitched_grad(gout, Wp, stride)
        for n in prange(N, schedule="static"):
            for e in range(fptr[n], fptr[n + 1]):
                gw[e] = 0
            if Ho == 0 or Wo == 0:
                continue
            for b in range(B):
                for e in range(fptr[n], fptr[n + 1]):
                    gw[e] += _dot_plane(g + (b * N + n) * plane,
                                        &xpad[b, ch[e], ky[e], kx[e]],
                                        Ho, Wo, Wp, stride)
        free(g)


def dense_backward_weight(const real[:, :, :, ::1] gout,
                          const real[:, :, :, ::1] xpad, int stride,
                          real[:, :, :, ::1] gw):
    cdef Py_ssize_t B = gout.shape[0], N = gout.shape[1]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    cdef Py_ssize_t M = gw.shape[1], K = gw.shape[2]
    cdef Py_ssize_t Wp = xpad.shape[3]
    cdef Py_ssize_t plane = Ho * (Wp if stride == 1 else Wo)
    cdef Py_ssize_t n, b, c, u, v
    cdef real* g
    with nogil:
        g = _pitched_grad(gout, Wp, stride)
        for n in prange(N, schedule="static"):
            memset(&gw[n, 0, 0, 0], 0, M * K * K * sizeof(real))
            if Ho == 0 or Wo == 0:
                continue
            for b in range(B):
                for c in range(M):
                    for u in range(K):
                        for v in range(K):
                            gw[n, c, u, v] += _dot_plane(
                                g + (b * N + n) * plane, &xpad[b, c, u, v],
                                Ho, Wo, Wp, stride)
        free(g)
