# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels.

Semantics match kernels._fallback exactly, including the accumulation order
of col2im (ascending kernel offset per output cell), so results are
bit-identical across backends.
"""

import numpy as np


def im2col(double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out = np.empty((n, c * kh * kw, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t i, ch, ky, kx, oy, ox, row, iy, ix
    cdef double v
    with nogil:
        for i in range(n):
            for ch in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        row = (ch * kh + ky) * kw + kx
                        for oy in range(oh):
                            iy = oy * stride + ky - pad
                            for ox in range(ow):
                                ix = ox * stride + kx - pad
                                if 0 <= iy < h and 0 <= ix < w:
                                    v = x[i, ch, iy, ix]
                                else:
                                    v = 0.0
                                cols[i, row, oy * ow + ox] = v
    return out


def col2im(double[:, :, ::1] cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t i, ch, ky, kx, oy, ox, row, iy, ix
    with nogil:
        for i in range(n):
            for ch in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        row = (ch * kh + ky) * kw + kx
                        for oy in range(oh):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + kx - pad
                                if 0 <= ix < w:
                                    x[i, ch, iy, ix] += cols[i, row, oy * ow + ox]
    return out
