"""Reverse-mode automatic differentiation over numpy arrays.

Every operation here is polymorphic: given plain ndarrays it evaluates
eagerly and returns an ndarray, given at least one `Var` it records the
computation and returns a `Var`.  This lets a single definition of a
dynamics function or a loss serve both the fast simulation path and the
differentiable training path.

The tape is array-valued (one node per numpy op, not per scalar), so a
full-batch loss over a few thousand states costs a few hundred nodes.
Gradient accumulation follows graph construction order, which makes
backward passes bit-reproducible run to run.
"""

import numpy as np

from .errors import ContractError, ShapeError


class Var:
    """A node in the recorded computation graph.

    Holds the forward value, the parent nodes and the vector-Jacobian
    callbacks that map the output cotangent to each parent's cotangent.
    """

    __slots__ = ("value", "parents", "vjps", "grad")

    # make ndarray <op> Var defer to the reflected Var operator instead of
    # attempting elementwise object ufuncs
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # arithmetic sugar; every overload routes through the module ops
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def val(x):
    """Forward value of x whether it is a Var or a plain array/scalar."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(grad, shape):
    """Sum a cotangent over the axes that numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(out_value, pairs):
    """Build a Var from (parent, vjp) pairs, keeping only Var parents."""
    parents = tuple(p for p, _ in pairs)
    vjps = tuple(f for _, f in pairs)
    return Var(out_value, parents, vjps)


def add(a, b):
    av, bv = val(a), val(b)
    out = av + bv
    if not _any_var(a, b):
        return out
    pairs = []
    if isinstance(a, Var):
        pairs.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pairs.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return _make(out, pairs)


def sub(a, b):
    av, bv = val(a), val(b)
    out = av - bv
    if not _any_var(a, b):
        return out
    pairs = []
    if isinstance(a, Var):
        pairs.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        pairs.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return _make(out, pairs)


def mul(a, b):
    av, bv = val(a), val(b)
    out = av * bv
    if not _any_var(a, b):
        return out
    pairs = []
    if isinstance(a, Var):
        pairs.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Var):
        pairs.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return _make(out, pairs)


def div(a, b):
    av, bv = val(a), val(b)
    out = av / bv
    if not _any_var(a, b):
        return out
    pairs = []
    if isinstance(a, Var):
        pairs.append((a, lambda g: _unbroadcast(g / bv, av.shape)))
    if isinstance(b, Var):
        pairs.append((b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))
    return _make(out, pairs)


def neg(a):
    if not isinstance(a, Var):
        return -val(a)
    return _make(-a.value, [(a, lambda g: -g)])


def matmul(a, b):
    """Matrix product with numpy @ semantics; operands must be >= 2-D."""
    av, bv = val(a), val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    out = av @ bv
    if not _any_var(a, b):
        return out
    pairs = []
    if isinstance(a, Var):
        bT = np.swapaxes(bv, -1, -2)
        pairs.append((a, lambda g: _unbroadcast(g @ bT, av.shape)))
    if isinstance(b, Var):
        aT = np.swapaxes(av, -1, -2)
        pairs.append((b, lambda g: _unbroadcast(aT @ g, bv.shape)))
    return _make(out, pairs)


def tanh(a):
    av = val(a)
    out = np.tanh(av)
    if not isinstance(a, Var):
        return out
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sin(a):
    av = val(a)
    if not isinstance(a, Var):
        return np.sin(av)
    return _make(np.sin(av), [(a, lambda g: g * np.cos(av))])


def cos(a):
    av = val(a)
    if not isinstance(a, Var):
        return np.cos(av)
    return _make(np.cos(av), [(a, lambda g: -g * np.sin(av))])


def exp(a):
    av = val(a)
    out = np.exp(av)
    if not isinstance(a, Var):
        return out
    return _make(out, [(a, lambda g: g * out)])


def square(a):
    av = val(a)
    if not isinstance(a, Var):
        return av * av
    return _make(av * av, [(a, lambda g: g * 2.0 * av)])


def relu(a):
    """Positive part max(a, 0).  Subgradient at exactly 0 is taken as 0,
    so a sample sitting exactly on the margin contributes no gradient."""
    av = val(a)
    out = np.maximum(av, 0.0)
    if not isinstance(a, Var):
        return out
    mask = av > 0.0
    return _make(out, [(a, lambda g: g * mask)])


def clamp(a, lo, hi):
    """Hard clamp.  Gradient is identity strictly inside [lo, hi] and zero
    outside; at the boundary the interior (identity) branch is used."""
    av = val(a)
    out = np.clip(av, lo, hi)
    if not isinstance(a, Var):
        return out
    mask = (av >= lo) & (av <= hi)
    return _make(out, [(a, lambda g: g * mask)])


def sum_(a, axis=None, keepdims=False):
    av = val(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _make(out, [(a, vjp)])


def mean_(a, axis=None, keepdims=False):
    av = val(a)
    if axis is None:
        n = av.size
    else:
        n = av.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) / float(n)


def amax(a, axis=None, keepdims=False):
    """Maximum reduction.  The gradient routes to the first maximal entry
    along the reduced axis (ties broken by lowest index), which keeps the
    backward pass deterministic."""
    av = val(a)
    out = np.max(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    if axis is None:
        idx = np.unravel_index(np.argmax(av), av.shape)

        def vjp(g):
            gg = np.zeros_like(av)
            gg[idx] = g
            return gg

    else:
        arg = np.argmax(av, axis=axis)
        onehot = np.zeros_like(av)
        np.put_along_axis(onehot, np.expand_dims(arg, axis), 1.0, axis=axis)

        def vjp(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            return onehot * gg

    return _make(out, [(a, vjp)])


def norm(a, axis=None, keepdims=False):
    """Euclidean norm along an axis, with a zero (sub)gradient at 0."""
    av = val(a)
    out = np.sqrt(np.sum(av * av, axis=axis, keepdims=keepdims))
    if not isinstance(a, Var):
        return out

    def vjp(g):
        gg = g
        nn = out
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
            nn = np.expand_dims(out, axis)
        safe = np.where(nn > 0.0, nn, 1.0)
        return np.where(nn > 0.0, gg * av / safe, 0.0)

    return _make(out, [(a, vjp)])


def getitem(a, key):
    av = val(a)
    out = av[key]
    if not isinstance(a, Var):
        return out

    def vjp(g):
        gg = np.zeros_like(av)
        gg[key] = g
        return gg

    return _make(out, [(a, vjp)])


def reshape(a, shape):
    av = val(a)
    out = av.reshape(shape)
    if not isinstance(a, Var):
        return out
    return _make(out, [(a, lambda g: g.reshape(av.shape))])


def expand_dims(a, axis):
    av = val(a)
    out = np.expand_dims(av, axis)
    return reshape(a, out.shape) if isinstance(a, Var) else out


def swapaxes(a, ax1, ax2):
    av = val(a)
    out = np.swapaxes(av, ax1, ax2)
    if not isinstance(a, Var):
        return out
    return _make(out, [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def stack(parts, axis=0):
    values = [val(p) for p in parts]
    out = np.stack(values, axis=axis)
    if not _any_var(*parts):
        return out
    pairs = []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            pairs.append((p, lambda g, i=i: np.take(g, i, axis=axis)))
    return _make(out, pairs)


def concat(parts, axis=0):
    values = [val(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not _any_var(*parts):
        return out
    offsets = np.cumsum([0] + [v.shape[axis] for v in values])
    pairs = []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pairs.append((p, lambda g, sl=tuple(sl): g[sl]))
    return _make(out, pairs)


def zeros_like_batch(template, trailing=()):
    """Plain-array zeros matching the leading (batch) dims of template."""
    tv = val(template)
    return np.zeros(tv.shape[:1] + tuple(trailing))


def _toposort(root):
    """Iterative depth-first topological order; parents precede their
    consumers, so the root comes last."""
    order = []
    seen = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out, seed=None):
    """Run reverse-mode accumulation from `out`.

    With no explicit seed the output must be scalar.  Gradients accumulate
    into the `.grad` field of every reachable Var.
    """
    if not isinstance(out, Var):
        raise ContractError("backward requires a recorded Var")
    if seed is None:
        if out.value.size != 1:
            raise ContractError(
                "backward from a non-scalar output needs an explicit seed"
            )
        seed = np.ones_like(out.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.value.shape:
            raise ShapeError("seed shape does not match output shape")

    order = _toposort(out)
    for node in order:
        node.grad = None
    out.grad = seed
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = contrib.copy() if contrib is g else contrib
            else:
                parent.grad = parent.grad + contrib
