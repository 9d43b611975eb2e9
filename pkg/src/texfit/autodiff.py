"""Reverse-mode automatic differentiation over numpy arrays.

A ``Var`` wraps a float64 ndarray and records, for every derived value, the
parent variables together with vector-Jacobian callbacks. ``grad`` replays the
tape in reverse creation order, which makes gradient accumulation fully
deterministic.

All free functions in this module accept either ``Var`` or plain arrays and
return the matching kind, so the geometry/loss code is written once and runs
in a cheap value-only mode (plain numpy) or a recording mode (Var leaves).
"""

from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (undo numpy broadcasting)."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """A node on the tape: a value plus links to its inputs."""

    __slots__ = ("value", "parents", "uid")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, value, parents=()):
        self.value = _f64(value)
        self.parents = parents  # tuple of (Var, vjp callable)
        self.uid = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

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
        return Var(-self.value, ((self, lambda g: -g),))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


def is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def value_of(x):
    return x.value if isinstance(x, Var) else _f64(x)


def detach(x):
    return x.value if isinstance(x, Var) else _f64(x)


def _lift(out, *pairs):
    """Build a Var from (input, vjp) pairs, keeping only Var inputs."""
    parents = tuple((x, vjp) for x, vjp in pairs if isinstance(x, Var))
    return Var(out, parents)


def add(a, b):
    if not is_var(a, b):
        return _f64(a) + _f64(b)
    av, bv = value_of(a), value_of(b)
    return _lift(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    if not is_var(a, b):
        return _f64(a) - _f64(b)
    av, bv = value_of(a), value_of(b)
    return _lift(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    if not is_var(a, b):
        return _f64(a) * _f64(b)
    av, bv = value_of(a), value_of(b)
    return _lift(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    if not is_var(a, b):
        return _f64(a) / _f64(b)
    av, bv = value_of(a), value_of(b)
    return _lift(av / bv,
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))


def power(a, p):
    """Elementwise a**p for a constant scalar exponent p."""
    if not isinstance(a, Var):
        return _f64(a) ** p
    av = a.value
    return _lift(av ** p, (a, lambda g: g * p * av ** (p - 1)))


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(_f64(a))
    out = np.sqrt(a.value)
    return _lift(out, (a, lambda g: g / (2.0 * out)))


def matmul(a, b):
    """Matrix product for operands of ndim 1 or 2."""
    if not is_var(a, b):
        return _f64(a) @ _f64(b)
    av, bv = value_of(a), value_of(b)
    out = av @ bv

    def vjp_a(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv)
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g
        return g * bv  # 1-D dot

    def vjp_b(g):
        if av.ndim == 2 and bv.ndim == 2:
            return av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, g)
        return g * av

    return _lift(out, (a, vjp_a), (b, vjp_b))


def take(a, idx):
    """Indexing/gather; backward scatter-adds into the input's shape."""
    if not isinstance(a, Var):
        return _f64(a)[idx]
    av = a.value
    out = av[idx]

    def vjp(g):
        acc = np.zeros_like(av)
        np.add.at(acc, idx, g)
        return acc

    return _lift(out, (a, vjp))


def reshape(a, shape):
    if not isinstance(a, Var):
        return _f64(a).reshape(shape)
    old = a.value.shape
    return _lift(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


def transpose(a, axes=None):
    if not isinstance(a, Var):
        return np.transpose(_f64(a), axes)
    inv = None if axes is None else np.argsort(axes)
    return _lift(np.transpose(a.value, axes),
                 (a, lambda g: np.transpose(g, inv)))


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return _f64(a).sum(axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _lift(av.sum(axis=axis, keepdims=keepdims), (a, vjp))


def mean_(a, axis=None, keepdims=False):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    if not is_var(a, b):
        return np.maximum(_f64(a), _f64(b))
    av, bv = value_of(a), value_of(b)
    pick_a = av >= bv
    return _lift(np.maximum(av, bv),
                 (a, lambda g: _unbroadcast(np.where(pick_a, g, 0.0), av.shape)),
                 (b, lambda g: _unbroadcast(np.where(pick_a, 0.0, g), bv.shape)))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through inside the closed range."""
    if not isinstance(a, Var):
        return np.clip(_f64(a), lo, hi)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _lift(np.clip(av, lo, hi),
                 (a, lambda g: np.where(inside, g, 0.0)))


def where(cond, a, b):
    """Select by a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    if not is_var(a, b):
        return np.where(cond, _f64(a), _f64(b))
    av, bv = value_of(a), value_of(b)
    return _lift(np.where(cond, av, bv),
                 (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
                 (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


def stack(xs, axis=0):
    if not is_var(*xs):
        return np.stack([_f64(x) for x in xs], axis=axis)
    out = np.stack([value_of(x) for x in xs], axis=axis)
    pairs = []
    for i, x in enumerate(xs):
        def vjp(g, i=i):
            return np.take(g, i, axis=axis)
        pairs.append((x, vjp))
    return _lift(out, *pairs)


def concatenate(xs, axis=0):
    if not is_var(*xs):
        return np.concatenate([_f64(x) for x in xs], axis=axis)
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    pairs = []
    for i, x in enumerate(xs):
        def vjp(g, i=i):
            return np.split(g, splits, axis=axis)[i]
        pairs.append((x, vjp))
    return _lift(out, *pairs)


def cross3(a, b):
    """Cross product of two 3-vectors (last-axis length 3)."""
    if not is_var(a, b):
        return np.cross(_f64(a), _f64(b))
    av, bv = value_of(a), value_of(b)
    return _lift(np.cross(av, bv),
                 (a, lambda g: _unbroadcast(np.cross(bv, g), av.shape)),
                 (b, lambda g: _unbroadcast(np.cross(g, av), bv.shape)))


def floor_index(a):
    """floor() as a detached integer array (non-differentiable by design)."""
    return np.floor(detach(a)).astype(np.int64)


def norm(a, axis=None):
    """Euclidean norm with a zero subgradient at the origin.

    The value is exactly ``sqrt(sum(a^2))``; at a == 0 the gradient is taken
    as 0 so that losses that vanish on identical inputs are stationary there.
    """
    if not isinstance(a, Var):
        return np.sqrt((_f64(a) ** 2).sum(axis=axis))
    av = a.value
    out = np.sqrt((av ** 2).sum(axis=axis))

    def vjp(g):
        safe = np.where(out == 0.0, 1.0, out)
        scale = np.where(out == 0.0, 0.0, np.asarray(g) / safe)
        if axis is not None:
            scale = np.expand_dims(scale, axis)
        return scale * av

    return _lift(out, (a, vjp))


def grad(root, leaves):
    """Gradients of scalar ``root`` w.r.t. each Var in ``leaves``.

    Reverse accumulation runs in a fixed (creation-order) topological order,
    so results are bit-reproducible.
    """
    if not isinstance(root, Var):
        raise TypeError("grad root must be a Var")
    if root.value.ndim != 0 and root.value.size != 1:
        raise ValueError("grad root must be scalar")

    # Iterative DFS post-order: inputs before consumers.
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.uid not in seen:
                stack.append((parent, False))

    grads = {root.uid: np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(node.uid)
        if g is None:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            acc = grads.get(parent.uid)
            grads[parent.uid] = pg if acc is None else acc + pg

    return [grads[leaf.uid].reshape(leaf.value.shape)
            if leaf.uid in grads else np.zeros_like(leaf.value)
            for leaf in leaves]
