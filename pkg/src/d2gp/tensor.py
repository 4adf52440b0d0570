"""Dense float64 tensors with reverse-mode autodiff.

The engine is a build-per-run tape: each operation that involves a tensor
requiring gradients records its parents and a vector-Jacobian closure on the
output node. ``backward`` walks the graph once in reverse topological order
and consumes it. Only first-order derivatives are supported; broadcasting is
restricted to scalar-with-tensor.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractError, DegenerateInputError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording within the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """A float64 n-d array, optionally participating in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars only for the mixed forms
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(full_like(self, other) if np.isscalar(other) else other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def full_like(t, value):
    return Tensor(np.full(t.data.shape, float(value)))


def _record(out_data, parents, vjp):
    """Build the output node, attaching tape info when required."""
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable node.

    The tape is consumed: node links are cleared after the pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    flow = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in flow:
                    flow[id(p)] = flow[id(p)] + pg
                else:
                    flow[id(p)] = pg
        node._parents = ()
        node._vjp = None


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        return _record(a.data + b, (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        return _record(a.data - b, (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        s = float(b)
        return _record(a.data * s, (a,), lambda g: (g * s,))
    b = _as_tensor(b)
    if b.data.ndim == 0:
        return _record(a.data * b.data, (a, b),
                       lambda g: (g * b.data, np.sum(g * a.data)))
    if a.data.ndim == 0:
        return _record(a.data * b.data, (a, b),
                       lambda g: (np.sum(g * b.data), g * a.data))
    _check_same_shape(a, b, "mul")
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        return mul(a, 1.0 / float(b))
    b = _as_tensor(b)
    if b.data.ndim != 0:
        _check_same_shape(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        if b.data.ndim == 0 and a.data.ndim != 0:
            gb = np.sum(gb)
        return ga, gb

    return _record(out, (a, b), vjp)


def sqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def matmul(a, b):
    """2D @ 2D (or batched rows @ 2D) matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    return _record(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def matvec(A, x):
    A, x = _as_tensor(A), _as_tensor(x)
    if A.data.ndim != 2 or x.data.ndim != 1 or A.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: shapes {A.data.shape} and {x.data.shape} do not conform")
    return _record(A.data @ x.data, (A, x),
                   lambda g: (np.outer(g, x.data), A.data.T @ g))


def tsum(a):
    a = _as_tensor(a)
    return _record(np.asarray(np.sum(a.data)), (a,),
                   lambda g: (np.full_like(a.data, float(g)),))


def tmean(a):
    a = _as_tensor(a)
    n = a.data.size
    return _record(np.asarray(np.mean(a.data)), (a,),
                   lambda g: (np.full_like(a.data, float(g) / n),))


def sum_last(a):
    """Sum over the last axis; used for per-sample reductions."""
    a = _as_tensor(a)
    out = np.sum(a.data, axis=-1)
    return _record(out, (a,),
                   lambda g: (np.repeat(np.expand_dims(g, -1), a.data.shape[-1], axis=-1),))


def sumsq(a):
    a = _as_tensor(a)
    return _record(np.asarray(np.sum(a.data * a.data)), (a,),
                   lambda g: (2.0 * float(g) * a.data,))


def inner(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "inner")
    return _record(np.asarray(np.sum(a.data * b.data)), (a, b),
                   lambda g: (float(g) * b.data, float(g) * a.data))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_cols(a, idx):
    """Select indices along the last axis; backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[..., idx]
    n = a.data.shape[-1]

    def vjp(g):
        ga = np.zeros(a.data.shape, dtype=np.float64)
        np.add.at(ga, (..., idx), g)
        return (ga,)

    return _record(out, (a,), vjp)


def transpose2d(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d: expected 2D, got {a.data.shape}")
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def rowwise_mul(x, v):
    """Multiply each row of x (..., n) by the vector v (n,)."""
    x, v = _as_tensor(x), _as_tensor(v)
    if v.data.ndim != 1 or x.data.shape[-1] != v.data.shape[0]:
        raise ShapeError(f"rowwise_mul: shapes {x.data.shape} and {v.data.shape}")

    def vjp(g):
        gv = g * x.data
        if gv.ndim > 1:
            gv = gv.reshape(-1, v.data.shape[0]).sum(axis=0)
        return g * v.data, gv

    return _record(x.data * v.data, (x, v), vjp)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a):
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), vjp)


def soft_threshold(a, tau):
    """sign(v) * max(|v| - tau, 0); subgradient 0 at the kink."""
    if tau < 0:
        raise ContractError("soft_threshold: tau must be >= 0")
    a = _as_tensor(a)
    mag = np.abs(a.data) - tau
    mask = mag > 0
    out = np.sign(a.data) * np.where(mask, mag, 0.0)
    return _record(out, (a,), lambda g: (g * mask,))


def cosine_similarity(a, b):
    """a.b / (|a||b|) of the flattened tensors; errors on zero-norm input."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "cosine_similarity")
    if not np.any(a.data) or not np.any(b.data):
        raise DegenerateInputError("cosine_similarity: zero-norm input")
    num = inner(a, b)
    return div(num, mul(sqrt(sumsq(a)), sqrt(sumsq(b))))


def rowwise_cosine_similarity(a, b):
    """Per-row cosine similarity for (B, n) inputs -> (B,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "rowwise_cosine_similarity")
    na = np.sqrt(np.sum(a.data * a.data, axis=-1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("rowwise_cosine_similarity: zero-norm row")
    num = sum_last(mul(a, b))
    den = mul(sqrt(sum_last(mul(a, a))), sqrt(sum_last(mul(b, b))))
    return div(num, den)


# ---------------------------------------------------------------------------
# convolution and normalization
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw):
    """(B, C, H, W) -> contiguous (B*H*W, C*kh*kw) patch matrix."""
    B, C, H, W = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, C * kh * kw)


def conv2d(x, w, b=None):
    """Same-padding stride-1 2D convolution (cross-correlation convention).

    x: (B, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,) or None.
    """
    x = _as_tensor(x)
    w = _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d: shapes {x.data.shape} and {w.data.shape} do not conform")
    kh, kw = w.data.shape[2], w.data.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel dims must be odd for same padding")
    B, Cin, H, W = x.data.shape
    Cout = w.data.shape[0]
    if kh == 1 and kw == 1:
        # pointwise: a channel-mixing gemm per batch item
        xm = x.data.reshape(B, Cin, H * W)
        wm = w.data.reshape(Cout, Cin)
        out = np.matmul(wm, xm).reshape(B, Cout, H, W)
    else:
        # patches rebuilt in the vjp to keep the closure light
        wm = w.data.reshape(Cout, -1)
        out = (_im2col(x.data, kh, kw) @ wm.T).reshape(B, H, W, Cout).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (Cout,):
            raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({Cout},)")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def vjp(g):
        if kh == 1 and kw == 1:
            gm = g.reshape(B, Cout, H * W)
            xm = x.data.reshape(B, Cin, H * W)
            gw = np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
            gx = np.matmul(w.data.reshape(Cout, Cin).T, gm).reshape(x.data.shape)
        else:
            gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, Cout)
            gw = (gm.T @ _im2col(x.data, kh, kw)).reshape(w.data.shape)
            wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # swap in/out, flip
            gcols = _im2col(g, kh, kw)
            gx = (gcols @ wf.reshape(Cin, -1).T).reshape(B, H, W, Cin).transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _record(out, parents, vjp)


def _im2col_dw(x, kh, kw):
    """(B, C, H, W) -> contiguous (C, B*H*W, kh*kw) per-channel patch matrix."""
    B, C, H, W = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    return np.ascontiguousarray(view.transpose(1, 0, 2, 3, 4, 5)).reshape(C, B * H * W, kh * kw)


def depthwise_conv2d(x, w, b=None):
    """Same-padding stride-1 depthwise convolution. w: (C, kh, kw)."""
    x = _as_tensor(x)
    w = _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"depthwise_conv2d: shapes {x.data.shape} and {w.data.shape} do not conform")
    kh, kw = w.data.shape[1], w.data.shape[2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("depthwise_conv2d: kernel dims must be odd for same padding")
    B, C, H, W = x.data.shape
    wm = w.data.reshape(C, kh * kw, 1)
    # (C, BHW, kh*kw) patches, one gemv per channel; rebuilt in the vjp so the
    # closure does not pin ~kh*kw copies of the activation in memory
    out = np.matmul(_im2col_dw(x.data, kh, kw), wm).reshape(C, B, H, W).transpose(1, 0, 2, 3)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (C,):
            raise ShapeError("depthwise_conv2d: bias shape mismatch")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def vjp(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(C, 1, B * H * W)
        gw = np.matmul(gm, _im2col_dw(x.data, kh, kw)).reshape(w.data.shape)
        wflip = w.data[:, ::-1, ::-1].reshape(C, kh * kw, 1)
        gcols = _im2col_dw(g, kh, kw)
        gx = np.matmul(gcols, wflip).reshape(C, B, H, W).transpose(1, 0, 2, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _record(out, parents, vjp)


def add_channel_bias(x, b):
    """x: (B, C, H, W) plus per-channel bias b: (C,)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 4 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_channel_bias: shapes {x.data.shape}, {b.data.shape}")
    out = x.data + b.data[None, :, None, None]
    return _record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def channel_layer_norm(x, gamma, beta, eps=1e-6):
    """Layer norm over the channel axis of (B, C, H, W), affine per channel."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"channel_layer_norm: expected 4D input, got {x.data.shape}")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError("channel_layer_norm: affine params must be (C,)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def vjp(g):
        gxhat = g * gamma.data[None, :, None, None]
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = istd * (gxhat - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# generic linear operators on the tape
# ---------------------------------------------------------------------------

def apply_linear(forward_fn, adjoint_fn, x):
    """Record a linear map with an analytic adjoint as one tape op."""
    x = _as_tensor(x)
    return _record(forward_fn(x.data), (x,), lambda g: (adjoint_fn(g),))
