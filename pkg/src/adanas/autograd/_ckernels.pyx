# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv2d kernels (NHWC activations, HWIO weights, stride 1, "same" padding).

Inputs are zero-padded once so the tiled loops in _conv_tiles.h need no
bounds checks. The input gradient is the forward pass with spatially
flipped, channel-transposed weights.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from "_conv_tiles.h" nogil:
    void adn_forward_row(const double* xp, Py_ssize_t xrow_stride, Py_ssize_t cin,
                         const double* w, const double* wt, Py_ssize_t k, Py_ssize_t cout,
                         const double* bias, double* out, Py_ssize_t wd)
    void adn_weight_row(const double* xr, Py_ssize_t cin, const double* gr, Py_ssize_t wd,
                        Py_ssize_t cout, double* gw)


def _pad(a, p):
    return np.pad(np.asarray(a, dtype=np.float64), ((0, 0), (p, p), (p, p), (0, 0)))


cdef object _conv(x, w, b):
    w = np.asarray(w, dtype=np.float64)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(w)
    cdef const double[:, :, :, ::1] wt = np.ascontiguousarray(w.transpose(3, 0, 1, 2))
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t k = wv.shape[0], cin = wv.shape[2], cout = wv.shape[3]
    cdef const double[:, :, :, ::1] xp = _pad(x, k // 2)
    cdef Py_ssize_t n = xp.shape[0], h = xp.shape[1] - 2 * (k // 2), wd = xp.shape[2] - 2 * (k // 2)
    out_arr = np.empty((n, h, wd, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b_, i
    if out_arr.size == 0:
        return out_arr
    with nogil:
        for b_ in range(n):
            for i in range(h):
                adn_forward_row(&xp[b_, i, 0, 0], xp.shape[2] * cin, cin, &wv[0, 0, 0, 0], &wt[0, 0, 0, 0], k, cout,
                                &bv[0], &out[b_, i, 0, 0], wd)
    return out_arr


def conv2d_forward(x, w, b):
    return _conv(x, w, b)


def conv2d_backward_input(g, w):
    w = np.asarray(w, dtype=np.float64)
    return _conv(g, w[::-1, ::-1].transpose(0, 1, 3, 2), np.zeros(w.shape[2]))


def conv2d_backward_weight(x, g, Py_ssize_t k):
    cdef const double[:, :, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, :, :, ::1] xp = _pad(x, k // 2)
    cdef Py_ssize_t n = gv.shape[0], h = gv.shape[1], wd = gv.shape[2], cout = gv.shape[3]
    cdef Py_ssize_t cin = xp.shape[3]
    gw_arr = np.zeros((k, k, cin, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b_, i, di, dj
    if gv.size and cin:
        with nogil:
            # row-major over the gradient so each row stays cached across taps
            for b_ in range(n):
                for i in range(h):
                    for di in range(k):
                        for dj in range(k):
                            adn_weight_row(&xp[b_, i + di, dj, 0], cin, &gv[b_, i, 0, 0], wd, cout,
                                           &gw[di, dj, 0, 0])
    return gw_arr, np.asarray(gv).sum(axis=(0, 1, 2))
