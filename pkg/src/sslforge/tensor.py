"""Reverse-mode autodiff over numpy arrays.

Only the op set the damage classifier needs, nothing general purpose.
Tensors are float32 by default; float64 is runtime-selectable (pass
dtype explicitly or set_default_dtype) for finite-difference checks,
where float32 noise would drown the signal.

The graph is implicit: each op records its parent tensors and a closure
that maps the upstream gradient to parent gradients. backward() walks
the DAG in reverse topological order, iteratively, so graph depth is
not bounded by the Python recursion limit.
"""

import os
from contextlib import contextmanager

import numpy as np

from .backend import get_kernels
from .errors import ArgumentError, DegenerateBatchError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True
_DEBUG_CHECKS = os.environ.get("SSLFORGE_DEBUG", "") not in ("", "0")


def set_default_dtype(dtype):
    global DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ArgumentError(f"unsupported dtype {dtype!r}")
    DEFAULT_DTYPE = dtype


def debug_checks(enabled):
    """Toggle per-op finiteness checks (also settable via SSLFORGE_DEBUG)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _node(data, parents, backward_fn):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced by an operation")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    """Backpropagate from a scalar loss; gradients land in Tensor.grad."""
    if loss.data.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _same_shape(a, b, "add")

    def bw(dy):
        _accum(a, dy)
        _accum(b, dy)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    _same_shape(a, b, "sub")

    def bw(dy):
        _accum(a, dy)
        _accum(b, -dy)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(dy):
        _accum(a, dy * bd)
        _accum(b, dy * ad)

    return _node(ad * bd, (a, b), bw)


def scale(a, s):
    s = float(s)

    def bw(dy):
        _accum(a, dy * s)

    return _node(a.data * np.asarray(s, dtype=a.data.dtype), (a,), bw)


def relu(a):
    mask = a.data > 0

    def bw(dy):
        _accum(a, dy * mask)

    return _node(np.where(mask, a.data, 0), (a,), bw)


def sum_all(a):
    shape = a.data.shape

    def bw(dy):
        _accum(a, np.broadcast_to(dy, shape).copy())

    return _node(a.data.sum(), (a,), bw)


def slice_rows(a, start, stop):
    """Rows [start, stop) of a along axis 0, as one differentiable op."""
    n = a.data.shape[0]
    if not 0 <= start < stop <= n:
        raise ArgumentError(f"slice_rows: bad range [{start}, {stop}) for {n} rows")

    def bw(dy):
        da = np.zeros_like(a.data)
        da[start:stop] = dy
        _accum(a, da)

    return _node(a.data[start:stop].copy(), (a,), bw)


def conv2d(x, w, stride=1, padding=0):
    """Zero-padded cross-correlation of x [N,C,H,W] with w [F,C,kh,kw]."""
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ArgumentError(f"conv2d: stride must be a positive int, got {stride!r}")
    if not isinstance(padding, (int, np.integer)) or padding < 0:
        raise ArgumentError(f"conv2d: padding must be a non-negative int, got {padding!r}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.data.shape} and {w.data.shape}")
    n, c, h, wdt = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cw}")
    hp, wp = h + 2 * padding, wdt + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    K = get_kernels()
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    out = K.conv2d_forward(xp, w.data, stride)
    wd = w.data

    def bw(dy):
        dy = np.ascontiguousarray(dy)
        if x.requires_grad:
            dxp = K.conv2d_grad_input(dy, wd, stride, hp, wp)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + wdt]
            _accum(x, dxp)
        if w.requires_grad:
            _accum(w, K.conv2d_grad_kernel(dy, xp, stride, kh, kw))

    return _node(out, (x, w), bw)


class BnState:
    """Running mean/variance buffers for one batch_norm site."""

    def __init__(self, channels, dtype=None):
        dtype = dtype or DEFAULT_DTYPE
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batch_norm(x, gamma, beta, state, train, eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over [N,C,H,W].

    Train mode normalizes by batch statistics (biased variance) and
    folds them into the running buffers; eval mode reads the buffers.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm: expected 4-d input, got {x.data.shape}")
    n, c, h, wdt = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")
    m = n * h * wdt
    if train and m < 2:
        raise DegenerateBatchError(f"batch_norm: need N*H*W >= 2 in train mode, got {m}")

    if train:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        state.running_mean[:] = momentum * state.running_mean + (1 - momentum) * mean
        state.running_var[:] = momentum * state.running_var + (1 - momentum) * var
    else:
        mean = state.running_mean.astype(x.data.dtype, copy=False)
        var = state.running_var.astype(x.data.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    gd = gamma.data

    def bw(dy):
        if gamma.requires_grad:
            _accum(gamma, (dy * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, dy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = dy * gd[None, :, None, None]
            if train:
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (dxhat - s1 / m - xhat * s2 / m) * inv_std[None, :, None, None]
            else:
                dx = dxhat * inv_std[None, :, None, None]
            _accum(x, dx)

    return _node(out, (x, gamma, beta), bw)


def dense(x, w, b):
    """Affine map: x [N,D] @ w [D,M] + b [M]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("dense: expected x [N,D], w [D,M], b [M]")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"dense: incompatible shapes {x.data.shape}, {w.data.shape}, {b.data.shape}")
    xd, wd = x.data, w.data

    def bw(dy):
        _accum(x, dy @ wd.T)
        _accum(w, xd.T @ dy)
        _accum(b, dy.sum(axis=0))

    return _node(xd @ wd + b.data, (x, w, b), bw)


def global_avg_pool(x):
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-d input, got {x.data.shape}")
    n, c, h, wdt = x.data.shape

    def bw(dy):
        g = np.broadcast_to(dy[:, :, None, None] / (h * wdt), (n, c, h, wdt))
        _accum(x, np.ascontiguousarray(g))

    return _node(x.data.mean(axis=(2, 3)), (x,), bw)


def softmax(x):
    """Row softmax of [N,K] logits, max-subtracted for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax: expected 2-d logits, got {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(dy):
        _accum(x, p * (dy - (dy * p).sum(axis=1, keepdims=True)))

    return _node(p, (x,), bw)


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean cross-entropy between target rows and softmax(logits) rows.

    targets is a constant [N,K] array of distributions; gradients never
    flow into it. Optional weights w gives (1/N) * sum_i w_i * H_i,
    which is exactly the masked form the threshold loss needs.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: expected 2-d logits, got {logits.data.shape}")
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    t = t.astype(logits.data.dtype, copy=False)
    if t.shape != logits.data.shape:
        raise ShapeError(f"softmax_cross_entropy: targets {t.shape} vs logits {logits.data.shape}")
    rowsum = t.sum(axis=1)
    if not np.all(np.abs(rowsum - 1.0) <= 1e-6):
        raise ArgumentError("softmax_cross_entropy: target rows must sum to 1")
    n = logits.data.shape[0]
    if weights is None:
        wv = None
    else:
        wv = np.asarray(weights, dtype=logits.data.dtype)
        if wv.shape != (n,):
            raise ShapeError(f"softmax_cross_entropy: weights must have shape ({n},)")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    per_row = lse - (t * z).sum(axis=1)
    if wv is not None:
        per_row = per_row * wv
    val = per_row.sum() / n
    p = np.exp(z - lse[:, None])

    def bw(dy):
        g = (p - t) / n
        if wv is not None:
            g = g * wv[:, None]
        _accum(logits, g * dy)

    return _node(np.asarray(val, dtype=logits.data.dtype), (logits,), bw)


def squared_l2(a, b):
    """Scalar sum of squared differences between a and a constant b."""
    t = b.data if isinstance(b, Tensor) else np.asarray(b)
    t = t.astype(a.data.dtype, copy=False)
    if t.shape != a.data.shape:
        raise ShapeError(f"squared_l2: shape mismatch {a.data.shape} vs {t.shape}")
    diff = a.data - t

    def bw(dy):
        _accum(a, 2.0 * diff * dy)

    return _node(np.asarray((diff * diff).sum(), dtype=a.data.dtype), (a,), bw)
