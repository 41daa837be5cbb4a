"""Numpy reference implementations of the hot kernels.

Shapes follow the compiled module exactly:

* ``x``  : (S, B, C, H, W)   S independent weight samples, B examples
* ``w``  : (S, F, C, k, k)   one filter bank per weight sample
* output : (S, B, F, H-k+1, W-k+1)  (valid cross-correlation, stride 1)
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def logsumexp_rows(x):
    """Row-wise max-shifted log-sum-exp of a 2-D array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def conv2d_forward(x, w):
    k = w.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(3, 4))
    return np.einsum("sbchwij,sfcij->sbfhw", windows, w, optimize=True)


def conv2d_grad_weight(x, g):
    """Gradient w.r.t. the filters, given upstream gradient ``g``."""
    k = x.shape[3] - g.shape[3] + 1
    windows = sliding_window_view(x, (k, k), axis=(3, 4))
    return np.einsum("sbchwij,sbfhw->sfcij", windows, g, optimize=True)


def conv2d_grad_input(g, w):
    k = w.shape[-1]
    padded = np.pad(g, ((0, 0), (0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    windows = sliding_window_view(padded, (k, k), axis=(3, 4))
    return np.einsum("sbfhwij,sfcij->sbchw", windows, w[..., ::-1, ::-1], optimize=True)
