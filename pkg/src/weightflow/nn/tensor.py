"""Dense reverse-mode autodiff over float64 numpy arrays.

Every op builds a new :class:`Tensor` whose ``_backward`` closure maps the
upstream gradient to one gradient per parent. Only leaves (tensors created
directly with ``requires_grad=True``) accumulate into ``.grad``; intermediate
gradients live in a dict during :meth:`Tensor.backward` and are dropped.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

Array = np.ndarray


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


def _check_finite(data: Array, op: str) -> Array:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    return data


def _unbroadcast(g: Array, shape: tuple) -> Array:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """A float64 array with an optional recorded computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None
        self._consumed = False
        self.name = name

    # -- basics ---------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- graph ----------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        if self._consumed:
            raise RuntimeError("backward() already called on this graph; rebuild it before calling again")
        self._consumed = True
        if not self.requires_grad:
            return
        order = _toposort(self)
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)


def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor(_check_finite(data, op))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise ----------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "silu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# -- linear algebra -------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and 2-D ``b`` of shape (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (d_out, d_in)."""
    x, w = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear expects input width {w.shape[1]}, got {x.shape[-1]}")

    def backward(g):
        gx = g @ w.data
        gw = g.reshape(-1, w.shape[0]).T @ x.data.reshape(-1, w.shape[1])
        return gx, gw

    out = _make(x.data @ w.data.T, (x, w), backward, "linear")
    return out if bias is None else add(out, bias)


# -- reductions and shaping -----------------------------------------------------
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def pad_to(a, length: int) -> Tensor:
    """Zero-pad the last axis of ``a`` up to ``length``."""
    a = as_tensor(a)
    extra = length - a.shape[-1]
    if extra < 0:
        raise ValueError("pad_to length shorter than input")
    if extra == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 1) + [(0, extra)]
    n = a.shape[-1]
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[..., :n],), "pad")


# -- losses ---------------------------------------------------------------------
def log_softmax(logits) -> Tensor:
    x = as_tensor(logits)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class, fused and stabilised."""
    x = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise ValueError("cross_entropy expects logits of shape (n, c)")
    n, c = x.shape
    if n == 0:
        raise ValueError("cross_entropy on an empty batch")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels must be ints in [0, c) with one label per row")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = np.mean(np.log(denom[:, 0]) - shifted[rows, labels])

    def backward(g):
        soft = expd / denom
        soft[rows, labels] -= 1.0
        return (soft * (g / n),)

    return _make(np.asarray(loss), (x,), backward, "cross_entropy")


def mse(a, b) -> Tensor:
    d = sub(a, b)
    return tmean(square(d))


# -- convolution ----------------------------------------------------------------
def _same_pad(k: int) -> tuple:
    before = (k - 1) // 2
    return before, k - 1 - before


def conv2d(x, weight, bias=None) -> Tensor:
    """Direct stride-1 'same' convolution; x is (N, C, H, W), weight (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = _same_pad(kh), _same_pad(kw)
    xp = np.pad(x.data, ((0, 0), (0, 0), ph, pw))
    out = np.zeros((n, o, h, wd))
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, :, dy:dy + h, dx:dx + wd]
            out += np.einsum("nchw,oc->nohw", patch, w.data[:, :, dy, dx])

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[:, :, dy:dy + h, dx:dx + wd]
                gxp[:, :, dy:dy + h, dx:dx + wd] += np.einsum("nohw,oc->nchw", g, w.data[:, :, dy, dx])
                gw[:, :, dy, dx] = np.einsum("nohw,nchw->oc", g, patch)
        gx = gxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + wd]
        return gx, gw

    res = _make(out, (x, w), backward, "conv2d")
    if bias is not None:
        res = add(res, reshape(as_tensor(bias), (1, o, 1, 1)))
    return res
