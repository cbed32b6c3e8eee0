# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution primitives.

Semantics match ``stsc.nn.kernels.numpy_backend`` exactly; that module is
the reference implementation. These loops run single-threaded on purpose,
summation order is fixed so results are reproducible bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def gather(double[:, :, :, ::1] xpad, double[:, :, :, ::1] w, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t n = xpad.shape[0]
    cdef Py_ssize_t hp = xpad.shape[1]
    cdef Py_ssize_t wp = xpad.shape[2]
    cdef Py_ssize_t ci = xpad.shape[3]
    cdef Py_ssize_t kh = w.shape[0]
    cdef Py_ssize_t kw = w.shape[1]
    cdef Py_ssize_t co = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1
    cdef Py_ssize_t wo = (wp - kw) // sw + 1

    out_arr = np.zeros((n, ho, wo, co), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out_arr
    cdef Py_ssize_t b, i, j, u, v, c, o
    cdef double xv

    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for u in range(kh):
                        for v in range(kw):
                            for c in range(ci):
                                xv = xpad[b, i * sh + u, j * sw + v, c]
                                for o in range(co):
                                    y[b, i, j, o] += xv * w[u, v, c, o]
    return out_arr


def scatter(double[:, :, :, ::1] dy, double[:, :, :, ::1] w, Py_ssize_t sh, Py_ssize_t sw,
            Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = dy.shape[0]
    cdef Py_ssize_t ho = dy.shape[1]
    cdef Py_ssize_t wo = dy.shape[2]
    cdef Py_ssize_t co = dy.shape[3]
    cdef Py_ssize_t kh = w.shape[0]
    cdef Py_ssize_t kw = w.shape[1]
    cdef Py_ssize_t ci = w.shape[2]

    out_arr = np.zeros((n, hp, wp, ci), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, u, v, c, o
    cdef double acc

    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for u in range(kh):
                        for v in range(kw):
                            for c in range(ci):
                                acc = 0.0
                                for o in range(co):
                                    acc += dy[b, i, j, o] * w[u, v, c, o]
                                out[b, i * sh + u, j * sw + v, c] += acc
    return out_arr


def patch_outer(double[:, :, :, ::1] xpad, double[:, :, :, ::1] dy, Py_ssize_t sh, Py_ssize_t sw,
                Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = xpad.shape[0]
    cdef Py_ssize_t ci = xpad.shape[3]
    cdef Py_ssize_t ho = dy.shape[1]
    cdef Py_ssize_t wo = dy.shape[2]
    cdef Py_ssize_t co = dy.shape[3]

    dw_arr = np.zeros((kh, kw, ci, co), dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, i, j, u, v, c, o
    cdef double xv

    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for u in range(kh):
                        for v in range(kw):
                            for c in range(ci):
                                xv = xpad[b, i * sh + u, j * sw + v, c]
                                for o in range(co):
                                    dw[u, v, c, o] += xv * dy[b, i, j, o]
    return dw_arr
