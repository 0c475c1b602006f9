"""Reverse-mode autodiff over dense float64 numpy arrays.

Deliberately small: exactly the primitives the gated two-branch objective
and the evaluation stack need, nothing more. Everything runs in 64-bit so
central finite-difference checks (see gradcheck.py) have headroom.

Gradients accumulate in a fixed reverse-topological order derived from the
construction order of the graph, so repeated backward passes over identical
inputs are bitwise reproducible.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_FLOOR = 1e-300  # clamp for log() inside cross-entropy
COS_CLAMP = 1e-12   # keeps sqrt(1 - cos^2) real inside the margin op


class AutodiffError(ValueError):
    """Shape or precondition violation in a primitive."""


class DegenerateEmbeddingError(AutodiffError):
    """A vector with (near-)zero norm where a unit vector is required."""


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backward().

    Leaves are built directly (``Tensor(data, requires_grad=...)``); interior
    nodes are produced by the primitives below and remember their parents
    plus a closure that routes incoming gradients to them. ``backward()``
    overwrites ``.grad`` on every node it reaches, so gradients never leak
    between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # A little operator sugar for readable loss code.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def _topo_order(self):
        # Iterative postorder DFS; parents are visited in the order they
        # were stored at construction, which fixes the accumulation order.
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self, seed=None):
        """Accumulate gradients of this node w.r.t. every reachable node.

        seed defaults to ones (useful only for scalar outputs). Clears all
        stale .grad fields in the reachable subgraph first.
        """
        if seed is None:
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.asarray(seed, dtype=np.float64)
            if seed_arr.shape != self.data.shape:
                raise AutodiffError(
                    f"seed shape {seed_arr.shape} != output shape {self.data.shape}"
                )
        order = self._topo_order()
        for node in order:
            node.grad = None
        self.grad = seed_arr
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        # Constant subgraphs are pruned so eval-only forwards stay cheap.
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise primitives (add/sub/mul allow numpy broadcasting; gradients
# are reduced back to each parent's shape)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a, c):
    a = _wrap(a)
    c = float(c)
    data = a.data * c

    def backward(g):
        _accum(a, g * c)

    return _make(data, (a,), backward)


def tanh(a):
    a = _wrap(a)
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def relu(a):
    a = _wrap(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        # subgradient 0 at the kink
        _accum(a, g * (a.data > 0.0))

    return _make(data, (a,), backward)


def sigmoid(a):
    """Elementwise 1 / (1 + exp(-x)), computed in the overflow-safe split form."""
    a = _wrap(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def sqrt(a):
    """Elementwise square root; inputs must be strictly positive for a
    finite gradient (callers clamp with an epsilon first)."""
    a = _wrap(a)
    if np.any(a.data < 0.0):
        raise AutodiffError("sqrt of negative input")
    y = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / y))

    return _make(y, (a,), backward)


def reshape(a, shape):
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and contractions


def tsum(a, axis=None):
    """Sum over the given axis (int, tuple, or None for all)."""
    a = _wrap(a)
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        gx = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(gx, a.data.shape).copy())

    return _make(data, (a,), backward)


def tmean(a, axis=None):
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return scale(tsum(a, axis=axis), 1.0 / n)


def inner(a, b):
    """Flattened dot product; returns a 0-d scalar tensor."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise AutodiffError(f"inner: shape mismatch {a.data.shape} vs {b.data.shape}")
    data = np.float64((a.data * b.data).sum())

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(data, (a, b), backward)


def matmul(a, b):
    """2-D matrix product [N,K]@[K,M]."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise AutodiffError(f"matmul: inner dims {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def concat_last(parts):
    """Concatenate along the last axis."""
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def backward(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off:off + w])
            off += w

    return _make(data, tuple(parts), backward)


def softmax(a, axis=-1):
    """Stabilized softmax along one axis."""
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - dot))

    return _make(s, (a,), backward)


# ---------------------------------------------------------------------------
# convolutions (zero padding, "same" temporal length)


def depthwise_conv1d(x, kernel, bias):
    """Per-channel temporal convolution.

    x: [B,C,T], kernel: [C,K] with K odd, bias: [C]. Zero padding of
    (K-1)/2 on each side keeps the temporal length.
    """
    x, kernel, bias = _wrap(x), _wrap(kernel), _wrap(bias)
    if x.data.ndim != 3 or kernel.data.ndim != 2:
        raise AutodiffError("depthwise_conv1d expects x[B,C,T], kernel[C,K]")
    B, C, T = x.data.shape
    Ck, K = kernel.data.shape
    if Ck != C:
        raise AutodiffError(f"channel mismatch: input has {C}, kernel has {Ck}")
    if K % 2 == 0:
        raise AutodiffError(f"kernel width must be odd, got {K}")
    if bias.data.shape != (C,):
        raise AutodiffError(f"bias must have shape ({C},), got {bias.data.shape}")
    pad = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, K, axis=2)  # [B,C,T,K]
    data = np.einsum("bctk,ck->bct", win, kernel.data) + bias.data[None, :, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
        gwin = sliding_window_view(gp, K, axis=2)
        _accum(x, np.einsum("bctk,ck->bct", gwin, kernel.data[:, ::-1]))
        _accum(kernel, np.einsum("bctk,bct->ck", win, g))
        _accum(bias, g.sum(axis=(0, 2)))

    return _make(data, (x, kernel, bias), backward)


def conv1d(x, kernel, bias):
    """Dense temporal convolution across channels.

    x: [B,Ci,T], kernel: [Co,Ci,K] with K odd, bias: [Co]. Same padding
    as depthwise_conv1d, so T is preserved.
    """
    x, kernel, bias = _wrap(x), _wrap(kernel), _wrap(bias)
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise AutodiffError("conv1d expects x[B,Ci,T], kernel[Co,Ci,K]")
    B, Ci, T = x.data.shape
    Co, Cik, K = kernel.data.shape
    if Cik != Ci:
        raise AutodiffError(f"channel mismatch: input has {Ci}, kernel has {Cik}")
    if K % 2 == 0:
        raise AutodiffError(f"kernel width must be odd, got {K}")
    if bias.data.shape != (Co,):
        raise AutodiffError(f"bias must have shape ({Co},), got {bias.data.shape}")
    pad = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, K, axis=2)  # [B,Ci,T,K]
    data = np.einsum("bitk,oik->bot", win, kernel.data) + bias.data[None, :, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
        gwin = sliding_window_view(gp, K, axis=2)  # [B,Co,T,K]
        _accum(x, np.einsum("botk,oik->bit", gwin, kernel.data[:, :, ::-1]))
        _accum(kernel, np.einsum("bitk,bot->oik", win, g))
        _accum(bias, g.sum(axis=(0, 2)))

    return _make(data, (x, kernel, bias), backward)


# ---------------------------------------------------------------------------
# classification and normalization


def _check_targets(targets, n_classes):
    t = np.asarray(targets)
    if t.ndim != 1:
        raise AutodiffError("targets must be a 1-D index array")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise AutodiffError(
            f"target index out of range [0,{n_classes}): {t.min()}..{t.max()}"
        )
    return t.astype(np.intp)


def cross_entropy_per_sample(logits, targets):
    """-log softmax(logits)[target] for each row; logits: [B,K].

    Stabilized by max subtraction; the inner log is clamped at 1e-300.
    """
    logits = _wrap(logits)
    if logits.data.ndim != 2:
        raise AutodiffError("logits must be [B,K]")
    B, K = logits.data.shape
    t = _check_targets(targets, K)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    sumexp = np.exp(z).sum(axis=1, keepdims=True)
    logp = z - np.log(np.maximum(sumexp, LOG_FLOOR))
    data = -logp[np.arange(B), t]

    def backward(g):
        soft = np.exp(logp)
        gi = soft * g[:, None]
        gi[np.arange(B), t] -= g
        _accum(logits, gi)

    return _make(data, (logits,), backward)


def cross_entropy_logits(logits, targets):
    """Mean cross-entropy over the batch (scalar tensor)."""
    return tmean(cross_entropy_per_sample(logits, targets))


def l2_normalize(v, axis=-1, eps=1e-12):
    """Rescale slices along `axis` to unit L2 norm.

    Raises DegenerateEmbeddingError when any slice norm is <= eps.
    """
    v = _wrap(v)
    norm = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise DegenerateEmbeddingError(
            f"norm below {eps}: cannot normalize a (near-)zero vector"
        )
    y = v.data / norm

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(v, (g - y * dot) / norm)

    return _make(y, (v,), backward)


def aam_margin(cosine, targets, s, m):
    """Additive angular margin on the target column of a cosine matrix.

    cosine: [B,N] of cos(theta); output is s*cos(theta) except in the
    target column, which becomes s*cos(theta + m). m=0 bypasses the margin
    entirely so it reduces to plain scaled cosine logits. For m>0 the
    cosine is clamped to 1-1e-12 in magnitude so sin(theta) stays real.
    """
    cosine = _wrap(cosine)
    if cosine.data.ndim != 2:
        raise AutodiffError("cosine must be [B,N]")
    B, N = cosine.data.shape
    t = _check_targets(targets, N)
    s = float(s)
    m = float(m)
    rows = np.arange(B)
    if m == 0.0:
        data = s * cosine.data

        def backward(g):
            _accum(cosine, g * s)

        return _make(data, (cosine,), backward)

    c_t = np.clip(cosine.data[rows, t], -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    sin_t = np.sqrt(1.0 - c_t * c_t)
    cos_m, sin_m = np.cos(m), np.sin(m)
    data = s * cosine.data
    data[rows, t] = s * (c_t * cos_m - sin_t * sin_m)

    def backward(g):
        # d/dc [c*cos m - sqrt(1-c^2)*sin m] = cos m + c*sin m/sqrt(1-c^2)
        gi = g * s
        gi[rows, t] = g[rows, t] * s * (cos_m + c_t * sin_m / sin_t)
        _accum(cosine, gi)

    return _make(data, (cosine,), backward)


def grl(x, gamma):
    """Gradient reversal: identity forward, -gamma * grad backward."""
    x = _wrap(x)
    gamma = float(gamma)
    if gamma < 0:
        raise AutodiffError(f"reversal strength must be >= 0, got {gamma}")

    def backward(g):
        _accum(x, -gamma * g)

    return _make(x.data, (x,), backward)
