# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch/pooling kernels. Same contracts as ``mnd._kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    cdef Py_ssize_t b, y, x, ch, i, j, col, row
    out = np.empty((n, oh * ow, c * kh * kw), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    row = y * ow + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                o[b, row, col] = xp[b, ch, y * stride + i, x * stride + j]
                                col = col + 1
    return out


def col2im(const double[:, :, ::1] cols, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    cdef Py_ssize_t b, y, x, ch, i, j, k = kh * kw
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    # loop order (i, j) outermost per element matches the numpy reference
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for y in range(oh):
                            for x in range(ow):
                                o[b, ch, y * stride + i, x * stride + j] += cols[b, y * ow + x, ch * k + i * kw + j]
    return out


def maxpool2d_forward(const double[:, :, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t oh = x.shape[2] // size, ow = x.shape[3] // size
    cdef Py_ssize_t b, ch, y, xx, i, j, best_k
    cdef double best, v
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        best = x[b, ch, y * size, xx * size]
                        best_k = 0
                        for i in range(size):
                            for j in range(size):
                                v = x[b, ch, y * size + i, xx * size + j]
                                if v > best:
                                    best = v
                                    best_k = i * size + j
                        o[b, ch, y, xx] = best
                        a[b, ch, y, xx] = best_k
    return out, arg


def maxpool2d_backward(const double[:, :, :, ::1] grad, const cnp.int64_t[:, :, :, ::1] arg, shape, Py_ssize_t size):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], oh = grad.shape[2], ow = grad.shape[3]
    cdef Py_ssize_t b, ch, y, xx, k
    out = np.zeros(tuple(shape), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        k = arg[b, ch, y, xx]
                        o[b, ch, y * size + k // size, xx * size + k % size] = grad[b, ch, y, xx]
    return out
