"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Supplies exactly the operations the attention / CTC / model math needs:
elementwise arithmetic and activations, matmul, inclusive scans, softmax,
reductions, gather / slicing / concat, and a stable binary logaddexp.
Everything is float64; every forward op checks for NaN/Inf and raises
:class:`NonFiniteError` on the first offending value.

Broadcasting is restricted to scalar-with-array and trailing-dimension
alignment (e.g. ``(T, d) + (d,)``); anything fancier is rejected so the
backward rules stay auditable.

Values below ``CUMPROD_FLOOR`` are clamped before :func:`cumprod` takes
logs, so its backward pass never divides by a vanishing forward value.
"""

import numpy as np

CUMPROD_FLOOR = 1e-12

_finite_checks = True


def set_finite_checks(enabled):
    """Toggle per-op NaN/Inf checking (on by default)."""
    global _finite_checks
    _finite_checks = bool(enabled)


class finite_checks_disabled:
    """Context manager: skip per-op NaN/Inf checks inside a hot loop.

    Callers must validate their end results themselves (the trainer checks
    every loss term and gradient before applying an update).
    """

    def __enter__(self):
        global _finite_checks
        self._saved = _finite_checks
        _finite_checks = False
        return self

    def __exit__(self, *exc):
        global _finite_checks
        _finite_checks = self._saved
        return False


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""

    def __init__(self, op_name):
        super().__init__(f"non-finite value produced by op '{op_name}'")
        self.op_name = op_name


class ShapeError(ValueError):
    pass


def _as_array(x):
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


def _broadcast_ok(sa, sb):
    """Allow equal shapes, scalar-with-array (including per-axis size-1,
    i.e. keepdims-style row/column scalars), or trailing-dim alignment."""
    if sa == sb:
        return True
    if int(np.prod(sa)) == 1 or int(np.prod(sb)) == 1:
        return True
    if len(sa) == len(sb):
        return all(m == n or m == 1 or n == 1 for m, n in zip(sa, sb))
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return big[len(big) - len(small):] == small


def _reduce_to_shape(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value in the computation graph.

    ``value`` is a float64 ndarray, ``grad`` is lazily allocated during
    backward, ``parents`` holds (input node, backward closure) pairs. The
    closure maps the output gradient to that input's gradient contribution.
    """

    __slots__ = ("value", "grad", "parents", "needs_grad", "op_name")

    def __init__(self, value, parents=(), needs_grad=False, op_name="leaf"):
        self.value = value
        self.grad = None
        self.parents = parents
        self.needs_grad = needs_grad
        self.op_name = op_name

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        return Node(self.value, op_name="detach")

    # operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Node(op={self.op_name}, shape={self.value.shape})"


def constant(x):
    return Node(_as_array(x), op_name="const")


def parameter(x):
    """Leaf node that accumulates gradients."""
    return Node(_as_array(x), needs_grad=True, op_name="param")


def _wrap(x):
    return x if isinstance(x, Node) else constant(x)


def _make(value, pairs, op_name):
    if _finite_checks and not np.all(np.isfinite(value)):
        raise NonFiniteError(op_name)
    parents = tuple((p, fn) for p, fn in pairs if p.needs_grad)
    return Node(value, parents, needs_grad=bool(parents), op_name=op_name)


# ---------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------

def _binary(name, a, b, fwd, grad_a, grad_b):
    a, b = _wrap(a), _wrap(b)
    if not _broadcast_ok(a.value.shape, b.value.shape):
        raise ShapeError(
            f"{name}: shapes {a.value.shape} and {b.value.shape} are not "
            "scalar- or trailing-broadcastable")
    out = fwd(a.value, b.value)
    pairs = (
        (a, lambda g: _reduce_to_shape(grad_a(g), a.value.shape)),
        (b, lambda g: _reduce_to_shape(grad_b(g), b.value.shape)),
    )
    return _make(out, pairs, name)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g: g, lambda g: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    with np.errstate(invalid="ignore"):
        return _binary("mul", a, b, lambda x, y: x * y,
                       lambda g: g * bv, lambda g: g * av)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    with np.errstate(divide="ignore", invalid="ignore"):
        return _binary("div", a, b, lambda x, y: x / y,
                       lambda g: g / bv, lambda g: -g * av / (bv * bv))


def neg(a):
    a = _wrap(a)
    return _make(-a.value, ((a, lambda g: -g),), "neg")


def exp(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _make(out, ((a, lambda g: g * out),), "exp")


def log(a):
    a = _wrap(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _make(out, ((a, lambda g: g / av),), "log")


def sqrt(a):
    a = _wrap(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.value)
    return _make(out, ((a, lambda g: g * 0.5 / out),), "sqrt")


def sigmoid(a):
    a = _wrap(a)
    av = a.value
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, ((a, lambda g: g * out * (1.0 - out)),), "sigmoid")


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.value)
    return _make(out, ((a, lambda g: g * (1.0 - out * out)),), "tanh")


def relu(a):
    a = _wrap(a)
    av = a.value
    mask = av > 0
    return _make(np.where(mask, av, 0.0),
                 ((a, lambda g: g * mask),), "relu")


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient passes only inside the active range."""
    a = _wrap(a)
    av = a.value
    out = np.clip(av, lo, hi)
    inside = np.ones_like(av, dtype=bool)
    if lo is not None:
        inside &= av >= lo
    if hi is not None:
        inside &= av <= hi
    return _make(out, ((a, lambda g: g * inside),), "clamp")


def abs_(a):
    """|a| with subgradient 0 at the kink."""
    a = _wrap(a)
    av = a.value
    return _make(np.abs(av), ((a, lambda g: g * np.sign(av)),), "abs")


def logaddexp(a, b):
    """Stable log(exp(a) + exp(b)); ties get 0.5/0.5 gradients."""
    a, b = _wrap(a), _wrap(b)
    if not _broadcast_ok(a.value.shape, b.value.shape):
        raise ShapeError(
            f"logaddexp: shapes {a.value.shape} and {b.value.shape} are not "
            "scalar- or trailing-broadcastable")
    out = np.logaddexp(a.value, b.value)
    wa = np.exp(a.value - out)
    wb = np.exp(b.value - out)
    pairs = (
        (a, lambda g: _reduce_to_shape(g * wa, a.value.shape)),
        (b, lambda g: _reduce_to_shape(g * wb, b.value.shape)),
    )
    return _make(out, pairs, "logaddexp")


# ---------------------------------------------------------------------
# matmul, scans, softmax, reductions
# ---------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    out = av @ bv
    pairs = (
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    )
    return _make(out, pairs, "matmul")


def cumsum(a, axis=-1):
    """Inclusive cumulative sum along ``axis``."""
    a = _wrap(a)
    if not -a.value.ndim <= axis < a.value.ndim:
        raise ShapeError(f"cumsum: axis {axis} invalid for shape {a.value.shape}")
    out = np.cumsum(a.value, axis=axis)

    def back(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

    return _make(out, ((a, back),), "cumsum")


def cumprod(a, axis=-1):
    """Inclusive cumulative product via the log-space safe form.

    Inputs are clamped to at least ``CUMPROD_FLOOR`` first (the intended
    domain is positive factors such as 1-p), so the backward pass never
    divides by anything below the floor.
    """
    return exp(cumsum(log(clamp(a, lo=CUMPROD_FLOOR)), axis=axis))


def softmax(a, axis=-1):
    a = _wrap(a)
    av = a.value
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _make(out, ((a, back),), "softmax")


def reduce_sum(a, axis=None, keepdims=False):
    a = _wrap(a)
    av = a.value
    out = av.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy() if np.ndim(g) else np.full(av.shape, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _make(np.asarray(out), ((a, back),), "sum")


def reduce_mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    av = a.value
    n = av.size if axis is None else av.shape[axis]
    out = av.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return np.full(av.shape, g / n)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape) / n

    return _make(np.asarray(out), ((a, back),), "mean")


def reduce_max(a, axis=None, keepdims=False):
    a = _wrap(a)
    av = a.value
    out = av.max(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            mask = av == out
            return mask * (g / mask.sum())
        m = av.max(axis=axis, keepdims=True)
        mask = av == m
        counts = mask.sum(axis=axis, keepdims=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        return mask * (gg / counts)

    return _make(np.asarray(out), ((a, back),), "max")


# ---------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------

def gather(a, indices, axis=0):
    """Take rows/columns by integer index; backward scatter-adds."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.value, idx, axis=axis)
    shape = a.value.shape

    def back(g):
        grad = np.zeros(shape, dtype=np.float64)
        if axis == 0:
            np.add.at(grad, idx, g)
        else:
            gm = np.moveaxis(grad, axis, 0)
            np.add.at(gm, idx, np.moveaxis(g, axis, 0))
        return grad

    return _make(out, ((a, back),), "gather")


def getitem(a, key):
    """Basic indexing (ints/slices); backward writes into a zero array."""
    a = _wrap(a)
    out = a.value[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    shape = a.value.shape

    def back(g):
        grad = np.zeros(shape, dtype=np.float64)
        grad[key] += g
        return grad

    return _make(out.copy(), ((a, back),), "getitem")


def concat(nodes, axis=0):
    nodes = [_wrap(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    pairs = []
    for i, n in enumerate(nodes):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        pairs.append((n, back))
    return _make(out, tuple(pairs), "concat")


def reshape(a, shape):
    a = _wrap(a)
    old = a.value.shape
    return _make(a.value.reshape(shape),
                 ((a, lambda g: g.reshape(old)),), "reshape")


def stack_rows(rows):
    """Stack 1-D nodes into a 2-D matrix."""
    return concat([reshape(r, (1, r.value.shape[0])) for r in rows], axis=0)


# ---------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------

def backward(root):
    """Reverse accumulation from a scalar root.

    Populates ``.grad`` on every reachable node that needs one and returns
    a map from node to gradient array.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.value.shape}")

    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)

    grads = {}
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        grads[node] = g
        for parent, fn in node.parents:
            contrib = fn(g)
            if parent.grad is None:
                # copy: contributions may alias views of upstream buffers
                parent.grad = np.array(contrib)
            else:
                parent.grad += contrib
    return grads
