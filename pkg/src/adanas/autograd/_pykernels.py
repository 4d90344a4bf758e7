"""Pure numpy conv2d kernels (NHWC activations, HWIO weights, stride 1, "same" padding).

These are the fallback used when the compiled extension is unavailable, and
the reference the compiled kernels are tested against.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _patches(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    # (N, H, W, C, kh, kw)
    return sliding_window_view(xp, (k, k), axis=(1, 2))


def conv2d_forward(x, w, b):
    k = w.shape[0]
    cols = _patches(x, k)
    out = np.einsum("nhwcij,ijco->nhwo", cols, w, optimize=True)
    out += b
    return out


def conv2d_backward_input(g, w):
    k = w.shape[0]
    # correlate the output gradient with the spatially flipped, transposed kernel
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2)
    cols = _patches(g, k)
    return np.einsum("nhwoij,ijoc->nhwc", cols, w_flip, optimize=True)


def conv2d_backward_weight(x, g, k):
    cols = _patches(x, k)
    gw = np.einsum("nhwcij,nhwo->ijco", cols, g, optimize=True)
    gb = g.sum(axis=(0, 1, 2))
    return gw, gb
