"""Numba-jitted convolution kernels.

Same interface as kernels_numpy. The jitted bodies write into preallocated
zeroed outputs so accumulator dtype follows the array dtype (a bare
`acc = 0.0` would be float64 under numba and poison float32 math).

prange always runs over independent output indices and every output element
is reduced in a fixed sequential order, so results do not depend on the
thread count.
"""

import numpy as np
from numba import njit, prange

_JIT = dict(cache=True, parallel=True, fastmath=True)


@njit(**_JIT)
def _fwd_s1(xp, w, out):
    n_img, n_cin = xp.shape[0], xp.shape[1]
    n_f, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    ho, wo = out.shape[2], out.shape[3]
    for nf in prange(n_img * n_f):
        n = nf // n_f
        f = nf % n_f
        for i in range(ho):
            orow = out[n, f, i]
            for c in range(n_cin):
                for u in range(kh):
                    xrow = xp[n, c, i + u]
                    for v in range(kw):
                        wv = w[f, c, u, v]
                        for j in range(wo):
                            orow[j] += wv * xrow[j + v]


@njit(**_JIT)
def _fwd_s2(xp, w, out):
    # stride 2 defeats SIMD on direct reads; split each input row into
    # even/odd phase copies so the inner loops are unit stride again
    n_img, n_cin = xp.shape[0], xp.shape[1]
    n_f, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    ho, wo = out.shape[2], out.shape[3]
    half = (kw >> 1) + 1
    for n in prange(n_img):
        ev = np.empty(wo + half, xp.dtype)
        od = np.empty(wo + half, xp.dtype)
        for i in range(ho):
            for c in range(n_cin):
                for u in range(kh):
                    xrow = xp[n, c, 2 * i + u]
                    m = xrow.shape[0]
                    for j in range(wo + half):
                        k = 2 * j
                        if k < m:
                            ev[j] = xrow[k]
                        if k + 1 < m:
                            od[j] = xrow[k + 1]
                    for f in range(n_f):
                        orow = out[n, f, i]
                        for v in range(kw):
                            wv = w[f, c, u, v]
                            off = v >> 1
                            if v & 1 == 0:
                                for j in range(wo):
                                    orow[j] += wv * ev[j + off]
                            else:
                                for j in range(wo):
                                    orow[j] += wv * od[j + off]


@njit(**_JIT)
def _fwd_any(xp, w, stride, out):
    n_img, n_cin = xp.shape[0], xp.shape[1]
    n_f, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    ho, wo = out.shape[2], out.shape[3]
    for nf in prange(n_img * n_f):
        n = nf // n_f
        f = nf % n_f
        for c in range(n_cin):
            for u in range(kh):
                for v in range(kw):
                    wv = w[f, c, u, v]
                    for i in range(ho):
                        xrow = xp[n, c, i * stride + u]
                        orow = out[n, f, i]
                        for j in range(wo):
                            orow[j] += wv * xrow[j * stride + v]


@njit(**_JIT)
def _grad_input_s1(dy, w, dxp):
    n_img, n_f, ho, wo = dy.shape
    n_cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for nc in prange(n_img * n_cin):
        n = nc // n_cin
        c = nc % n_cin
        for f in range(n_f):
            for u in range(kh):
                for v in range(kw):
                    wv = w[f, c, u, v]
                    for i in range(ho):
                        drow = dy[n, f, i]
                        xrow = dxp[n, c, i + u]
                        for j in range(wo):
                            xrow[j + v] += wv * drow[j]


@njit(**_JIT)
def _grad_input_any(dy, w, stride, dxp):
    n_img, n_f, ho, wo = dy.shape
    n_cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for nc in prange(n_img * n_cin):
        n = nc // n_cin
        c = nc % n_cin
        for f in range(n_f):
            for u in range(kh):
                for v in range(kw):
                    wv = w[f, c, u, v]
                    for i in range(ho):
                        drow = dy[n, f, i]
                        xrow = dxp[n, c, i * stride + u]
                        for j in range(wo):
                            xrow[j * stride + v] += wv * drow[j]


@njit(**_JIT)
def _grad_kernel(dy, xp, stride, dw):
    n_img, n_f, ho, wo = dy.shape
    n_cin, kh, kw = dw.shape[1], dw.shape[2], dw.shape[3]
    for fc in prange(n_f * n_cin):
        f = fc // n_cin
        c = fc % n_cin
        for u in range(kh):
            for v in range(kw):
                acc = dw[f, c, u, v]
                for n in range(n_img):
                    for i in range(ho):
                        drow = dy[n, f, i]
                        xrow = xp[n, c, i * stride + u]
                        if stride == 1:
                            for j in range(wo):
                                acc += drow[j] * xrow[j + v]
                        else:
                            for j in range(wo):
                                acc += drow[j] * xrow[j * stride + v]
                dw[f, c, u, v] = acc


def conv2d_forward(xp, w, stride):
    n, _, hp, wp = xp.shape
    f, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=xp.dtype)
    if stride == 1:
        _fwd_s1(xp, w, out)
    elif stride == 2:
        _fwd_s2(xp, w, out)
    else:
        _fwd_any(xp, w, stride, out)
    return out


def conv2d_grad_input(dy, w, stride, hp, wp):
    n = dy.shape[0]
    c = w.shape[1]
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    if stride == 1:
        _grad_input_s1(dy, w, dxp)
    else:
        _grad_input_any(dy, w, stride, dxp)
    return dxp


def conv2d_grad_kernel(dy, xp, stride, kh, kw):
    f = dy.shape[1]
    c = xp.shape[1]
    dw = np.zeros((f, c, kh, kw), dtype=dy.dtype)
    _grad_kernel(dy, xp, stride, dw)
    return dw
