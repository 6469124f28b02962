"""Pure-numpy convolution kernels.

Fallback path when numba is unavailable or disabled via SSLFORGE_BACKEND.
All functions take pre-padded inputs and preserve the input dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(xp, w, stride):
    """Cross-correlate padded input xp [N,C,Hp,Wp] with w [F,C,kh,kw]."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [N,C,Ho,Wo,kh,kw] -> contract C,kh,kw against w
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_input(dy, w, stride, hp, wp):
    """Gradient w.r.t. the padded input, shape [N,C,hp,wp]."""
    n, _, ho, wo = dy.shape
    c = w.shape[1]
    kh, kw = w.shape[2], w.shape[3]
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for u in range(kh):
        for v in range(kw):
            # [N,Ho,Wo,C] contribution of kernel tap (u,v)
            tap = np.tensordot(dy, w[:, :, u, v], axes=([1], [0]))
            dxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += (
                tap.transpose(0, 3, 1, 2))
    return dxp


def conv2d_grad_kernel(dy, xp, stride, kh, kw):
    """Gradient w.r.t. the kernel, shape [F,C,kh,kw]."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(
        np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3])))
