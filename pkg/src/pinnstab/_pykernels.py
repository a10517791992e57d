"""numpy versions of the fused adjoint kernels (same signatures as ``_ckernels``)."""
import numpy as np


def tanh_backward(g, y, out, accumulate):
    tmp = np.multiply(y, y)
    np.subtract(1, tmp, out=tmp)
    if accumulate:
        tmp *= g
        out += tmp
    else:
        np.multiply(g, tmp, out=out)


def square_backward(g, x, out, accumulate):
    if accumulate:
        tmp = np.multiply(g, x)
        tmp *= 2
        out += tmp
    else:
        np.multiply(g, x, out=out)
        out *= 2


def mul_backward(g, other, out, accumulate):
    if accumulate:
        out += g * other
    else:
        np.multiply(g, other, out=out)


def axpy(alpha, g, out, accumulate):
    if accumulate:
        out += alpha * g
    else:
        np.multiply(g, alpha, out=out)
