# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: direct-loop convolution, pooling, IIR and resampling.

Parallel loops split over disjoint output slices and keep a fixed per-element
accumulation order, so results are identical for any thread count.  Inner
loops run over contiguous memory through raw pointers so the C compiler can
vectorize them.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

ctypedef fused floating:
    float
    double


def conv3x3_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], ho = h - 2, wo = wd - 2
    if floating is float:
        y_arr = np.empty((n, o, ho, wo), dtype=np.float32)
    else:
        y_arr = np.empty((n, o, ho, wo), dtype=np.float64)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t task, i, co, ci, r, j
    cdef floating bv
    cdef floating w00, w01, w02, w10, w11, w12, w20, w21, w22
    cdef floating *yrow
    cdef const floating *x0
    cdef const floating *x1
    cdef const floating *x2
    for task in prange(n * o, nogil=True, schedule="static"):
        i = task // o
        co = task % o
        bv = b[co]
        for r in range(ho):
            yrow = &y[i, co, r, 0]
            for j in range(wo):
                yrow[j] = bv
            for ci in range(c):
                w00 = w[co, ci, 0, 0]
                w01 = w[co, ci, 0, 1]
                w02 = w[co, ci, 0, 2]
                w10 = w[co, ci, 1, 0]
                w11 = w[co, ci, 1, 1]
                w12 = w[co, ci, 1, 2]
                w20 = w[co, ci, 2, 0]
                w21 = w[co, ci, 2, 1]
                w22 = w[co, ci, 2, 2]
                x0 = &x[i, ci, r, 0]
                x1 = &x[i, ci, r + 1, 0]
                x2 = &x[i, ci, r + 2, 0]
                for j in range(wo):
                    yrow[j] = yrow[j] + (
                        w00 * x0[j] + w01 * x0[j + 1] + w02 * x0[j + 2]
                        + w10 * x1[j] + w11 * x1[j + 1] + w12 * x1[j + 2]
                        + w20 * x2[j] + w21 * x2[j + 1] + w22 * x2[j + 2]
                    )
    return y_arr


def conv3x3_grad_weights(floating[:, :, :, ::1] x, floating[:, :, :, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = dy.shape[1], ho = h - 2, wo = wd - 2
    if floating is float:
        dw_arr = np.zeros((o, c, 3, 3), dtype=np.float32)
        db_arr = np.zeros(o, dtype=np.float32)
    else:
        dw_arr = np.zeros((o, c, 3, 3), dtype=np.float64)
        db_arr = np.zeros(o, dtype=np.float64)
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    cdef Py_ssize_t co, i, ci, r, j
    cdef floating dv, s
    cdef floating a00, a01, a02, a10, a11, a12, a20, a21, a22
    cdef const floating *drow
    cdef const floating *x0
    cdef const floating *x1
    cdef const floating *x2
    for co in prange(o, nogil=True, schedule="static"):
        s = 0
        for i in range(n):
            for r in range(ho):
                drow = &dy[i, co, r, 0]
                for j in range(wo):
                    s = s + drow[j]
        db[co] = s
        for ci in range(c):
            a00 = a01 = a02 = a10 = a11 = a12 = a20 = a21 = a22 = 0
            for i in range(n):
                for r in range(ho):
                    drow = &dy[i, co, r, 0]
                    x0 = &x[i, ci, r, 0]
                    x1 = &x[i, ci, r + 1, 0]
                    x2 = &x[i, ci, r + 2, 0]
                    for j in range(wo):
                        dv = drow[j]
                        a00 = a00 + dv * x0[j]
                        a01 = a01 + dv * x0[j + 1]
                        a02 = a02 + dv * x0[j + 2]
                        a10 = a10 + dv * x1[j]
                        a11 = a11 + dv * x1[j + 1]
                        a12 = a12 + dv * x1[j + 2]
                        a20 = a20 + dv * x2[j]
                        a21 = a21 + dv * x2[j + 1]
                        a22 = a22 + dv * x2[j + 2]
            dw[co, ci, 0, 0] = a00
            dw[co, ci, 0, 1] = a01
            dw[co, ci, 0, 2] = a02
            dw[co, ci, 1, 0] = a10
            dw[co, ci, 1, 1] = a11
            dw[co, ci, 1, 2] = a12
            dw[co, ci, 2, 0] = a20
            dw[co, ci, 2, 1] = a21
            dw[co, ci, 2, 2] = a22
    return dw_arr, db_arr


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t th, Py_ssize_t tw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // th, wo = w // tw
    if floating is float:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    else:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int32)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef cnp.int32_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t task, i, ci, r, j, ky, kx, best
    cdef floating v, m
    for task in prange(n * c, nogil=True, schedule="static"):
        i = task // c
        ci = task % c
        for r in range(ho):
            for j in range(wo):
                m = x[i, ci, r * th, j * tw]
                best = 0
                for ky in range(th):
                    for kx in range(tw):
                        v = x[i, ci, r * th + ky, j * tw + kx]
                        if v > m:  # strict: first maximum wins ties
                            m = v
                            best = ky * tw + kx
                y[i, ci, r, j] = m
                idx[i, ci, r, j] = <cnp.int32_t> best
    return y_arr, idx_arr


def maxpool_backward(floating[:, :, :, ::1] dy, cnp.int32_t[:, :, :, ::1] idx,
                     x_shape, Py_ssize_t th, Py_ssize_t tw):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    if floating is float:
        dx_arr = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t task, i, ci, r, j, b
    for task in prange(n * c, nogil=True, schedule="static"):
        i = task // c
        ci = task % c
        for r in range(ho):
            for j in range(wo):
                b = idx[i, ci, r, j]
                dx[i, ci, r * th + b // tw, j * tw + b % tw] = dy[i, ci, r, j]
    return dx_arr


def biquad(double[::1] x, double b0, double b1, double b2, double a1, double a2):
    cdef Py_ssize_t n = x.shape[0], i
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double s1 = 0.0, s2 = 0.0, xi, yi
    with nogil:  # the recurrence is inherently sequential
        for i in range(n):
            xi = x[i]
            yi = b0 * xi + s1
            s1 = b1 * xi - a1 * yi + s2
            s2 = b2 * xi - a2 * yi
            y[i] = yi
    return y_arr


def resample_apply(double[::1] x, Py_ssize_t n_out, double step, double[:, ::1] table):
    cdef Py_ssize_t res = table.shape[0], taps = table.shape[1], half = taps // 2
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n_out, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i, j, k, phase, src
    cdef double t, frac, acc
    for i in prange(n_out, nogil=True, schedule="static"):
        t = i * step
        k = <Py_ssize_t> floor(t)
        frac = t - k
        phase = <Py_ssize_t> (frac * res + 0.5)
        if phase >= res:
            phase = 0
            k = k + 1
        acc = 0.0
        for j in range(taps):
            src = k + j - (half - 1)
            if 0 <= src < n:
                acc = acc + table[phase, j] * x[src]
        y[i] = acc
    return y_arr
