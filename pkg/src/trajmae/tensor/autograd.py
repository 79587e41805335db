"""Reverse-mode automatic differentiation over float64 numpy arrays."""

from __future__ import annotations

import contextlib
import itertools
import math

import numpy as np

from .. import kernels

LAYERNORM_EPS = 1e-5

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array node in the computation graph.

    ``parents`` and ``backward_fn`` are set only when the tensor was produced
    by an op with at least one input that requires grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "id", "name")
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return gather(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
    else:
        out.op = op
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def bw(g):
        _accumulate(x, g * pos)

    return _make(np.where(pos, x.data, 0.0), (x,), bw, "relu")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def bw(g):
        _accumulate(x, g * out)

    return _make(out, (x,), bw, "exp")


def huber(x, delta=1.0):
    """Elementwise Huber penalty: r**2/2 inside [-delta, delta], linear outside."""
    x = as_tensor(x)
    a = np.abs(x.data)
    inside = a <= delta
    val = np.where(inside, 0.5 * x.data * x.data, delta * (a - 0.5 * delta))

    def bw(g):
        _accumulate(x, g * np.where(inside, x.data, delta * np.sign(x.data)))

    return _make(val, (x,), bw, "huber")


def where(cond, a, b):
    """Select from ``a`` where ``cond`` else ``b``; ``cond`` is a constant bool array."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    shape = np.broadcast_shapes(cond.shape, a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.where(cond, g, 0.0), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.where(cond, 0.0, g), b.shape))

    out = np.where(cond, a.data, b.data)
    if out.shape != shape:
        out = np.broadcast_to(out, shape).copy()
    return _make(out, (a, b), bw, "where")


# --------------------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform") from None

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bw, "matmul")


def linear(x, w, b=None):
    """Affine map over the last axis: ``x @ w + b`` with ``w`` of shape (d_in, d_out)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: shapes {x.shape} and {w.shape} do not conform")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            _accumulate(x, (g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            _accumulate(w, x2.T @ g2)
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


def transpose(x, axes=None):
    x = as_tensor(x)
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accumulate(x, np.transpose(g, inv))

    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), bw, "transpose")


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), bw, "reshape")


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None

    def bw(g):
        _accumulate(x, _unbroadcast(g, x.shape))

    return _make(out, (x,), bw, "broadcast_to")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} do not conform on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def gather(x, index):
    """``x[index]`` for basic or advanced numpy indices; gradients scatter-add back."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as err:
        raise ShapeError(f"gather: index invalid for shape {x.shape}: {err}") from None

    def bw(g):
        full = np.zeros(x.shape)
        np.add.at(full, index, g)
        _accumulate(x, full)

    return _make(np.array(out, dtype=np.float64), (x,), bw, "gather")


def scatter(base, index, values):
    """Return a copy of ``base`` with ``base[index] = values`` (unique index positions)."""
    base, values = as_tensor(base), as_tensor(values)
    out = base.data.copy()
    try:
        out[index] = values.data
    except (IndexError, ValueError) as err:
        raise ShapeError(f"scatter: {values.shape} into {base.shape}: {err}") from None

    def bw(g):
        if base.requires_grad:
            gb = g.copy()
            gb[index] = 0.0
            _accumulate(base, gb)
        if values.requires_grad:
            _accumulate(values, np.broadcast_to(g[index], values.shape) if values.ndim == 0 else g[index])

    return _make(out, (base, values), bw, "scatter")


# --------------------------------------------------------------------------- reductions


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw, "sum")


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def masked_mean(x, selector):
    """Mean of the entries of ``x`` where the boolean ``selector`` is True."""
    x = as_tensor(x)
    sel = np.broadcast_to(np.asarray(selector, dtype=bool), x.shape)
    n = int(sel.sum())
    if n == 0:
        raise ValueError("masked_mean: selector is empty")
    out = x.data[sel].sum() / n

    def bw(g):
        _accumulate(x, np.where(sel, g / n, 0.0))

    return _make(out, (x,), bw, "masked_mean")


# --------------------------------------------------------------------------- normalization / attention


def softmax(x, axis=-1):
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError(f"softmax: axis {axis} of shape {x.shape} has length 0")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError(f"log_softmax: axis {axis} of shape {x.shape} has length 0")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        _accumulate(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gamma, beta, eps=LAYERNORM_EPS):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x = as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} with affine {gamma.shape}/{beta.shape}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    xhat, rstd = kernels.layernorm_forward(x2, eps)
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, d)
        if gamma.requires_grad:
            _accumulate(gamma, (g2 * xhat).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g2.sum(axis=0))
        if x.requires_grad:
            dxhat = np.ascontiguousarray(g2 * gamma.data)
            _accumulate(x, kernels.layernorm_backward(dxhat, xhat, rstd).reshape(x.shape))

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def attention(q, k, v, allowed):
    """Scaled dot-product attention with a boolean allowed-pairs lattice.

    Args:
        q: (G, H, Lq, dh); k, v: (G, H, Lk, dh).
        allowed: (G, Lq, Lk) bool. Banned pairs get exactly zero weight; a query
            row with nothing allowed yields a zero output.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 4 or k.shape != v.shape or q.shape[:2] != k.shape[:2] or q.shape[3] != k.shape[3]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != (q.shape[0], q.shape[2], k.shape[2]):
        raise ShapeError(
            f"attention: mask {allowed.shape} does not match query x key {(q.shape[0], q.shape[2], k.shape[2])}"
        )
    mask = np.ascontiguousarray(allowed).view(np.uint8) if kernels.BACKEND == "cython" else allowed
    out, probs = kernels.attention_forward(q.data, k.data, v.data, mask)

    def bw(g):
        dq, dk, dv = kernels.attention_backward(np.ascontiguousarray(g), q.data, k.data, v.data, probs)
        _accumulate(q, dq)
        _accumulate(k, dk)
        _accumulate(v, dv)

    return _make(out, (q, k, v), bw, "attention")


# --------------------------------------------------------------------------- backward pass


def topological_order(loss):
    """Nodes reachable from ``loss`` in topological (creation) order."""
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.id in seen or not t.requires_grad:
            continue
        seen.add(t.id)
        nodes.append(t)
        stack.extend(t.parents)
    nodes.sort(key=lambda t: t.id)
    return nodes


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every leaf that requires grad."""
    if not isinstance(loss, Tensor) or loss.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward: loss must be a scalar tensor, got shape {getattr(loss, 'shape', None)}")
    if not loss.requires_grad:
        return []
    order = topological_order(loss)
    loss.grad = np.ones(())
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            if node.parents:
                node.grad = None
    return order


def sinusoidal_encoding(length, dim):
    """Standard sin/cos positional table of shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    rate = np.exp(-(2 * (i // 2)) * math.log(10000.0) / dim)
    ang = pos * rate
    return np.where(i % 2 == 0, np.sin(ang), np.cos(ang))
