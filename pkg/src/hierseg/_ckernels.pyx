# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot paths; signatures mirror ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - k) // stride + 1


cdef inline void _valid_range(Py_ssize_t out_len, Py_ssize_t in_len, Py_ssize_t d,
                              Py_ssize_t stride, Py_ssize_t pad,
                              Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output positions o with 0 <= o*stride + d - pad < in_len
    cdef Py_ssize_t a = 0, b = out_len
    while a < out_len and a * stride + d - pad < 0:
        a += 1
    while b > a and (b - 1) * stride + d - pad >= in_len:
        b -= 1
    lo[0] = a
    hi[0] = b


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                   const double[::1] b, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = _out_size(h, kh, stride, pad)
    cdef Py_ssize_t wo = _out_size(wd, kw, stride, pad)
    out_arr = np.empty((n, k, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, ki, ci, di, dj, i, j, i_lo, i_hi, j_lo, j_hi, off
    cdef double wv, bv
    cdef double* orow
    cdef const double* xrow
    with nogil:
        for ni in range(n):
            for ki in range(k):
                bv = b[ki]
                for i in range(ho):
                    for j in range(wo):
                        out[ni, ki, i, j] = bv
                for ci in range(c):
                    for di in range(kh):
                        _valid_range(ho, h, di, stride, pad, &i_lo, &i_hi)
                        for dj in range(kw):
                            wv = w[ki, ci, di, dj]
                            _valid_range(wo, wd, dj, stride, pad, &j_lo, &j_hi)
                            off = dj - pad
                            for i in range(i_lo, i_hi):
                                orow = &out[ni, ki, i, 0]
                                xrow = &x[ni, ci, i * stride + di - pad, 0]
                                if stride == 1:
                                    for j in range(j_lo, j_hi):
                                        orow[j] += wv * xrow[j + off]
                                else:
                                    for j in range(j_lo, j_hi):
                                        orow[j] += wv * xrow[j * stride + off]
    return out_arr


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] gout, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gx_arr = np.zeros((n, c, h, wd))
    gw_arr = np.zeros((k, c, kh, kw))
    gb_arr = np.zeros(k)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t ni, ki, ci, di, dj, i, j, i_lo, i_hi, j_lo, j_hi, off
    cdef double wv, acc
    cdef const double* grow
    cdef const double* xrow
    cdef double* gxrow
    with nogil:
        for ni in range(n):
            for ki in range(k):
                acc = 0.0
                for i in range(ho):
                    for j in range(wo):
                        acc = acc + gout[ni, ki, i, j]
                gb[ki] += acc
                for ci in range(c):
                    for di in range(kh):
                        _valid_range(ho, h, di, stride, pad, &i_lo, &i_hi)
                        for dj in range(kw):
                            wv = w[ki, ci, di, dj]
                            _valid_range(wo, wd, dj, stride, pad, &j_lo, &j_hi)
                            off = dj - pad
                            acc = 0.0
                            for i in range(i_lo, i_hi):
                                grow = &gout[ni, ki, i, 0]
                                xrow = &x[ni, ci, i * stride + di - pad, 0]
                                gxrow = &gx[ni, ci, i * stride + di - pad, 0]
                                if stride == 1:
                                    for j in range(j_lo, j_hi):
                                        acc = acc + grow[j] * xrow[j + off]
                                    for j in range(j_lo, j_hi):
                                        gxrow[j + off] += wv * grow[j]
                                else:
                                    for j in range(j_lo, j_hi):
                                        acc = acc + grow[j] * xrow[j * stride + off]
                                        gxrow[j * stride + off] += wv * grow[j]
                            gw[ki, ci, di, dj] += acc
    return gx_arr, gw_arr, gb_arr


cdef void _taps(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] i0,
                Py_ssize_t[::1] i1, double[::1] frac) noexcept nogil:
    cdef double scale = <double>n_in / <double>n_out
    cdef double src
    cdef Py_ssize_t o
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        i0[o] = <Py_ssize_t>src
        if i0[o] > n_in - 1:
            i0[o] = n_in - 1
        i1[o] = i0[o] + 1
        if i1[o] > n_in - 1:
            i1[o] = n_in - 1
        frac[o] = src - i0[o]


def interp_matrix(Py_ssize_t n_in, Py_ssize_t n_out):
    i0 = np.empty(n_out, dtype=np.intp)
    i1 = np.empty(n_out, dtype=np.intp)
    frac = np.empty(n_out)
    _taps(n_in, n_out, i0, i1, frac)
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        m[o, i0[o]] += 1.0 - frac[o]
        m[o, i1[o]] += frac[o]
    return m


def upsample_forward(const double[:, :, :, ::1] x, Py_ssize_t factor):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h * factor, wo = w * factor
    ai0 = np.empty(ho, dtype=np.intp); ai1 = np.empty(ho, dtype=np.intp); af = np.empty(ho)
    bi0 = np.empty(wo, dtype=np.intp); bi1 = np.empty(wo, dtype=np.intp); bf = np.empty(wo)
    cdef Py_ssize_t[::1] a0 = ai0, a1 = ai1, b0 = bi0, b1 = bi1
    cdef double[::1] fa = af, fb = bf
    _taps(h, ho, a0, a1, fa)
    _taps(w, wo, b0, b1, fb)
    out_arr = np.empty((n, c, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, ci, a, bb
    cdef double top, bot
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for a in range(ho):
                    for bb in range(wo):
                        top = (1.0 - fb[bb]) * x[ni, ci, a0[a], b0[bb]] + fb[bb] * x[ni, ci, a0[a], b1[bb]]
                        bot = (1.0 - fb[bb]) * x[ni, ci, a1[a], b0[bb]] + fb[bb] * x[ni, ci, a1[a], b1[bb]]
                        out[ni, ci, a, bb] = (1.0 - fa[a]) * top + fa[a] * bot
    return out_arr


def upsample_backward(const double[:, :, :, ::1] gout, Py_ssize_t factor):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t h = ho // factor, w = wo // factor
    ai0 = np.empty(ho, dtype=np.intp); ai1 = np.empty(ho, dtype=np.intp); af = np.empty(ho)
    bi0 = np.empty(wo, dtype=np.intp); bi1 = np.empty(wo, dtype=np.intp); bf = np.empty(wo)
    cdef Py_ssize_t[::1] a0 = ai0, a1 = ai1, b0 = bi0, b1 = bi1
    cdef double[::1] fa = af, fb = bf
    _taps(h, ho, a0, a1, fa)
    _taps(w, wo, b0, b1, fb)
    gx_arr = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t ni, ci, a, bb
    cdef double g, ga, gb_
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for a in range(ho):
                    for bb in range(wo):
                        g = gout[ni, ci, a, bb]
                        ga = (1.0 - fa[a]) * g
                        gb_ = fa[a] * g
                        gx[ni, ci, a0[a], b0[bb]] += ga * (1.0 - fb[bb])
                        gx[ni, ci, a0[a], b1[bb]] += ga * fb[bb]
                        gx[ni, ci, a1[a], b0[bb]] += gb_ * (1.0 - fb[bb])
                        gx[ni, ci, a1[a], b1[bb]] += gb_ * fb[bb]
    return gx_arr


def vote_counts(classes, rects, Py_ssize_t n_classes, Py_ssize_t height, Py_ssize_t width):
    counts_arr = np.zeros((n_classes, height, width), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] counts = counts_arr
    cdef const cnp.int64_t[::1] cls_v = np.ascontiguousarray(classes, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] r = np.ascontiguousarray(rects, dtype=np.int64).reshape(-1, 4)
    cdef Py_ssize_t t, y, xx
    with nogil:
        for t in range(cls_v.shape[0]):
            for y in range(r[t, 1], r[t, 3]):
                for xx in range(r[t, 0], r[t, 2]):
                    counts[cls_v[t], y, xx] += 1
    return counts_arr
