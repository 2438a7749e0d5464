"""Reverse-mode automatic differentiation over float64 matrices.

A :class:`Tensor` wraps a 2-D (or scalar) ``numpy`` array and remembers the
operation that produced it, forming an implicit computation graph (the
gradient tape).  :func:`backward` walks that graph in reverse topological
order and accumulates ``d(loss)/d(leaf)`` into ``Tensor.grad``.  Leaves
default to ``requires_grad=False`` (inputs, targets); parameters are created
with ``requires_grad=True`` and gradient work is skipped for branches that
cannot reach a parameter.

Determinism notes
-----------------
Cross-row reductions (:func:`instance_norm` column statistics and
:func:`segment_sum`) sum their contributions in ascending value order, so the
result is bitwise independent of row ordering.  This is what makes the
model's permutation-equivariance contract testable with exact equality.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "backward",
    "matmul",
    "add_bias",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "exp",
    "neg",
    "clip",
    "concat_cols",
    "gather_rows",
    "segment_sum",
    "instance_norm",
    "sum_squares",
]


class Tensor:
    """Node of the computation graph; leaves (parameters/inputs) have no parents."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "name", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, name="", requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._vjp = vjp
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into every reachable tensor.

    Raises :class:`ShapeError` if ``loss`` is not a scalar.
    """
    if loss.value.shape not in ((), (1,), (1, 1)):
        raise ShapeError(
            f"backward requires a scalar loss, got shape {loss.value.shape}"
        )
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)

    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul mismatch: ({a.value.shape[0]}x{a.value.shape[1]}) @ "
            f"({b.value.shape[0]}x{b.value.shape[1]})"
        )
    out = Tensor(a.value @ b.value, (a, b))

    def vjp(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return (ga, gb)

    out._vjp = vjp
    return out


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a (1 x k) bias row to every row of x."""
    if bias.value.shape != (1, x.value.shape[1]):
        raise ShapeError(
            f"bias shape {bias.value.shape} does not match input width "
            f"{x.value.shape[1]}"
        )
    out = Tensor(x.value + bias.value, (x, bias))

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if bias.requires_grad else None
        return (g, gb)

    out._vjp = vjp
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))
    out._vjp = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value, (a, b))
    out._vjp = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (used to weight edge rows)."""
    out = Tensor(a.value * b.value, (a, b))

    def vjp(g):
        ga = _unbroadcast(g * b.value, a.value.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.value.shape) if b.requires_grad else None
        return (ga, gb)

    out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.value, 0.0), (x,))
    mask = x.value > 0.0
    out._vjp = lambda g: (g * mask,)
    return out


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    s = np.empty_like(v)
    pos = v >= 0.0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ez = np.exp(v[~pos])
    s[~pos] = ez / (1.0 + ez)
    out = Tensor(s, (x,))
    out._vjp = lambda g: (g * s * (1.0 - s),)
    return out


def exp(x: Tensor) -> Tensor:
    v = np.exp(x.value)
    out = Tensor(v, (x,))
    out._vjp = lambda g: (g * v,)
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.value, (x,))
    out._vjp = lambda g: (-g,)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes where input is inside the range."""
    out = Tensor(np.clip(x.value, lo, hi), (x,))
    inside = (x.value >= lo) & (x.value <= hi)
    out._vjp = lambda g: (g * inside,)
    return out


def concat_cols(*parts: Tensor) -> Tensor:
    rows = {p.value.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {sorted(rows)}")
    widths = [p.value.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), parts)
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        pieces = np.hsplit(g, splits)
        return tuple(
            piece if part.requires_grad else None for piece, part in zip(pieces, parts)
        )

    out._vjp = vjp
    return out


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    out = Tensor(x.value[index], (x,))

    def vjp(g):
        acc = np.zeros_like(x.value)
        np.add.at(acc, index, g)
        return (acc,)

    out._vjp = vjp
    return out


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into ``num_segments`` buckets.

    Within each bucket every column is summed in ascending value order, making
    the result independent of the order rows were supplied in.
    """
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if segment_ids.shape[0] != x.value.shape[0]:
        raise ShapeError(
            f"segment_sum: {segment_ids.shape[0]} ids for {x.value.shape[0]} rows"
        )
    acc = np.zeros((num_segments, x.value.shape[1]), dtype=np.float64)
    if segment_ids.size:
        order = np.argsort(segment_ids, kind="stable")
        sorted_ids = segment_ids[order]
        boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
        blocks = np.split(x.value[order], boundaries)
        bucket_ids = sorted_ids[np.concatenate(([0], boundaries))]
        for bucket, block in zip(bucket_ids, blocks):
            block.sort(axis=0)  # block is a fresh copy from np.split of a copy
            acc[bucket] = block.sum(axis=0)
    out = Tensor(acc, (x,))
    out._vjp = lambda g: (g[segment_ids],)
    return out


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each column to mean 0 / variance 1 over the rows of x.

    The rows are the elements (vertices or edges) of one graph, which is
    treated as the normalization instance.  There are no learned affine
    parameters.  Columns whose variance is at most ``eps`` are only centered
    and scaled by ``1/sqrt(eps)``, so constant columns (including single-row
    inputs) map to zeros.
    """
    v = x.value
    if v.shape[0] == 0:
        out = Tensor(v.copy(), (x,))
        out._vjp = lambda g: (g,)
        return out
    n = v.shape[0]
    sorted_v = np.sort(v, axis=0)  # canonical order for both column statistics
    mean = sorted_v.sum(axis=0)
    mean /= n
    sorted_v -= mean
    sorted_v *= sorted_v
    var = sorted_v.sum(axis=0)
    var /= n
    active = var > eps
    denom = np.sqrt(np.where(active, var, eps))
    y = v - mean
    y /= denom
    out = Tensor(y, (x,))

    def vjp(g):
        g_mean = g.mean(axis=0)
        gy_mean = (g * y).mean(axis=0)
        gy_mean *= active
        dx = g - g_mean
        dx -= y * gy_mean
        dx /= denom
        return (dx,)

    out._vjp = vjp
    return out


def sum_squares(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.value * x.value), (x,))
    out._vjp = lambda g: (2.0 * g * x.value,)
    return out
