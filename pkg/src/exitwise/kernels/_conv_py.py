"""Pure-numpy valid-convolution kernels, NHWC layout.

Same signatures as the compiled ``_conv`` module. Used when the extension
is not built or ``EXITWISE_PURE_PYTHON`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw):
    # (N, Ho, Wo, C, kh, kw)
    return sliding_window_view(x, (kh, kw), axis=(1, 2))


def conv2d_forward(x, w, b):
    kh, kw = w.shape[:2]
    out = np.tensordot(_windows(x, kh, kw), w.transpose(2, 0, 1, 3),
                       axes=([3, 4, 5], [0, 1, 2]))
    out += b
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward(x, w, g, need_input_grad=True):
    kh, kw = w.shape[:2]
    gb = g.sum(axis=(0, 1, 2))
    gw = np.tensordot(_windows(x, kh, kw), g, axes=([0, 1, 2], [0, 1, 2]))
    gw = np.ascontiguousarray(gw.transpose(1, 2, 0, 3))
    gx = None
    if need_input_grad:
        # full correlation of g with the spatially flipped, channel-swapped filters
        gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        wf = w[::-1, ::-1].transpose(0, 1, 3, 2)
        gx = np.tensordot(_windows(gp, kh, kw), wf.transpose(2, 0, 1, 3),
                          axes=([3, 4, 5], [0, 1, 2]))
        gx = np.ascontiguousarray(gx, dtype=x.dtype)
    return gx, gw.astype(x.dtype, copy=False), gb.astype(x.dtype, copy=False)
