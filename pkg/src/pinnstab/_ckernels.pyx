# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused single-pass adjoint kernels for the tape's elementwise primitives.

Every kernel takes flat C-contiguous buffers of one precision and either
overwrites ``out`` or accumulates into it.
"""
from cython cimport floating


def tanh_backward(const floating[::1] g, const floating[::1] y,
                  floating[::1] out, bint accumulate):
    cdef Py_ssize_t i, n = out.shape[0]
    cdef floating t
    with nogil:
        if accumulate:
            for i in range(n):
                t = y[i]
                out[i] += g[i] * (1 - t * t)
        else:
            for i in range(n):
                t = y[i]
                out[i] = g[i] * (1 - t * t)


def square_backward(const floating[::1] g, const floating[::1] x,
                    floating[::1] out, bint accumulate):
    cdef Py_ssize_t i, n = out.shape[0]
    with nogil:
        if accumulate:
            for i in range(n):
                out[i] += 2 * g[i] * x[i]
        else:
            for i in range(n):
                out[i] = 2 * g[i] * x[i]


def mul_backward(const floating[::1] g, const floating[::1] other,
                 floating[::1] out, bint accumulate):
    cdef Py_ssize_t i, n = out.shape[0]
    with nogil:
        if accumulate:
            for i in range(n):
                out[i] += g[i] * other[i]
        else:
            for i in range(n):
                out[i] = g[i] * other[i]


def axpy(double alpha, const floating[::1] g, floating[::1] out, bint accumulate):
    cdef Py_ssize_t i, n = out.shape[0]
    cdef floating a = <floating>alpha
    with nogil:
        if accumulate:
            for i in range(n):
                out[i] += a * g[i]
        else:
            for i in range(n):
                out[i] = a * g[i]
