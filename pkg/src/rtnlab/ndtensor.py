"""Dense float64 arrays with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to tensors that live on it.
Tensors created without a tape are plain constants: operations on them run
eagerly and record nothing, which is also how finite-difference probes
evaluate a function.

    >>> tape = Tape()
    >>> x = tape.leaf(3.0)
    >>> y = tape.leaf(4.0)
    >>> grads = backward(x * y, tape)
    >>> float(x.grad), float(y.grad)
    (4.0, 3.0)
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, DimensionError, NumericError

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "check_gradients",
    "matmul", "linear", "transpose", "elementwise", "tanh", "sigmoid",
    "relu", "absolute", "add_const", "scale", "concat", "stack", "reshape",
    "tensor_sum", "mean", "ravel_index", "unravel_index",
]


class _Node:
    __slots__ = ("parents", "vjp", "leaf")

    def __init__(self, parents, vjp, leaf=None):
        self.parents = parents
        self.vjp = vjp
        self.leaf = leaf


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as operations execute, so parents always precede
    their children and the reverse sweep needs no sorting.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Tensor":
        t = Tensor(value)
        t.tape = self
        t.node = len(self.nodes)
        self.nodes.append(_Node((), None, leaf=t))
        return t

    def leaves(self):
        return [n.leaf for n in self.nodes if n.leaf is not None]

    def _record(self, data, parents, vjp) -> "Tensor":
        t = Tensor(data)
        t.tape = self
        t.node = len(self.nodes)
        self.nodes.append(_Node(parents, vjp))
        return t


class Tensor:
    """A float64 array, optionally attached to a :class:`Tape`.

    ``data`` is a numpy array in C (row-major) order.  ``grad`` is filled for
    leaves by :func:`backward`.
    """

    __slots__ = ("data", "tape", "node", "grad")
    __array_priority__ = 100

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.tape = None
        self.node = None
        self.grad = None

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
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = "" if self.tape is None else f", node={self.node}"
        return f"Tensor({self.data!r}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(data, parents, vjp):
    """Create the result of a primitive, recording it when any input is taped."""
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise ArgumentError("operands belong to different tapes")
    if tape is None:
        return Tensor(data)
    idx = tuple(p.node if p.tape is tape else None for p in parents)
    return tape._record(data, idx, vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _apply(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data
    return _apply(out, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _apply(a.data * c, (a,), lambda g: (g * c,))


def add_const(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _apply(a.data + float(c), (a,), lambda g: (g,))


def matmul(a, b) -> Tensor:
    """Rank-2 matrix product ``a @ b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _apply(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (in,) or (batch, in); weight is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        def vjp(g):
            gx = g @ wd
            gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
            return gx, gw
        return _apply(out, (x, weight), vjp)
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} does not match weight {weight.shape}")
    out = out + bias.data

    def vjp(g):
        gx = g @ wd
        if xd.ndim == 1:
            return gx, np.outer(g, xd), g
        return gx, g.T @ xd, g.sum(axis=0)
    return _apply(out, (x, weight, bias), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got shape {a.shape}")
    return _apply(a.data.T.copy(), (a,), lambda g: (g.T,))


# -- elementwise nonlinearities ------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _apply(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = expit(a.data)
    return _apply(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _apply(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _apply(np.abs(a.data), (a,), lambda g: (g * s,))


_ELEMENTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "abs": absolute,
    "identity": lambda t: t,
}


def elementwise(t, f: str, c: float | None = None) -> Tensor:
    """Apply a named elementwise map: tanh, sigmoid, relu, abs, identity,
    add-const or scale (the last two take ``c``)."""
    if f == "add-const":
        return add_const(t, c)
    if f == "scale":
        return scale(t, c)
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ArgumentError(f"unknown elementwise function {f!r}") from None
    return fn(as_tensor(t))


# -- shape manipulation ----------------------------------------------------------

def concat(parts, axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; gradients are sliced back to each part."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ArgumentError("concat needs at least one part")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shape mismatch: {[p.shape for p in parts]}") from e
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))
    return _apply(out, tuple(parts), vjp)


def stack(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ArgumentError("stack needs at least one part")
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack shape mismatch: {[p.shape for p in parts]}") from e
    n = len(parts)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))
    return _apply(out, tuple(parts), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _apply(out, (a,), lambda g: (g.reshape(src),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    idx = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in idx)

    def vjp(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _apply(np.array(a.data[index]), (a,), vjp)


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _apply(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, src).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    n = max(a.size, 1)
    return _apply(np.array(a.data.sum() / n), (a,), lambda g: (np.broadcast_to(g / n, src).copy(),))


# -- differentiation -----------------------------------------------------------------

def backward(root: Tensor, tape: Tape | None = None):
    """Propagate d(root)/d(.) through the tape.

    Sets ``grad`` on every leaf of the tape (zeros for leaves the root does
    not depend on) and returns the leaf gradients in leaf-creation order.
    """
    tape = tape if tape is not None else root.tape
    if root.size != 1:
        raise ArgumentError(f"backward needs a scalar root, got shape {root.shape}")
    if tape is None or root.tape is not tape:
        raise ArgumentError("root was not produced on this tape")
    grads: list = [None] * len(tape.nodes)
    grads[root.node] = np.ones_like(root.data)
    for i in range(root.node, -1, -1):
        node = tape.nodes[i]
        g = grads[i]
        if g is None or node.vjp is None:
            continue
        for pidx, pg in zip(node.parents, node.vjp(g)):
            if pidx is None:
                continue
            if grads[pidx] is None:
                grads[pidx] = np.array(pg, dtype=np.float64)
            else:
                grads[pidx] = grads[pidx] + pg
    out = []
    for i, node in enumerate(tape.nodes):
        if node.leaf is not None:
            g = grads[i]
            node.leaf.grad = np.zeros_like(node.leaf.data) if g is None else g.reshape(node.leaf.shape)
            out.append(node.leaf.grad)
    return out


def check_gradients(fn, point, step: float = 1e-5) -> float:
    """Worst relative disagreement between the tape gradient of ``fn`` at
    ``point`` and central differences.

    ``fn`` maps a Tensor to a scalar Tensor.  The per-coordinate error is
    ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    if not step > 0:
        raise ArgumentError("step must be positive")
    x0 = np.array(as_tensor(point).data, dtype=np.float64)
    tape = Tape()
    leaf = tape.leaf(x0)
    out = fn(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("function value is not finite")
    if out.tape is tape:
        backward(out, tape)
        analytic = leaf.grad.reshape(-1)
    else:  # fn ignores its argument
        analytic = np.zeros(x0.size)

    flat = x0.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = fn(Tensor(xp.reshape(x0.shape))).data
        fm = fn(Tensor(xm.reshape(x0.shape))).data
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericError(f"function value is not finite near coordinate {i}")
        numeric[i] = (float(fp.reshape(-1)[0]) - float(fm.reshape(-1)[0])) / (2.0 * step)
    if flat.size == 0:
        return 0.0
    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- row-major index helpers ------------------------------------------------------

def ravel_index(index, shape) -> int:
    flat = 0
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise DimensionError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        flat = flat * n + i
    return flat


def unravel_index(flat: int, shape):
    total = math.prod(shape)
    if not 0 <= flat < total:
        raise DimensionError(f"flat index {flat} out of range for shape {tuple(shape)}")
    out = []
    for n in reversed(shape):
        out.append(flat % n)
        flat //= n
    return tuple(reversed(out))
