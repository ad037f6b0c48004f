"""
Reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D array (scalars are 1x1). Binary elementwise ops accept
operands of equal shape, or one operand that is a row vector (1 x c), a column
vector (r x 1) or a scalar (1 x 1) broadcast against the other; nothing else
broadcasts.

Gradient semantics: `backward(root)` recomputes the gradients of all interior
nodes from scratch and *accumulates* into leaves, so calling it twice without
`zero_grad` doubles every leaf gradient.

A graph belongs to the thread that built it.
"""

from typing import Callable, Iterable, Sequence

import numpy as np

from errors import ShapeError


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "", requires_grad: bool = False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise ShapeError(op or "node", value.shape)
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward: Callable[[], None] = _noop
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError("item", self.value.shape)
        return float(self.value[0, 0])

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"


def _noop():
    pass


def constant(value) -> Node:
    return Node(value, op="const")


def parameter(value) -> Node:
    return Node(value, op="param", requires_grad=True)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _accumulate(node: Node, grad: np.ndarray):
    if node.requires_grad:
        node.grad += grad


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple[int, int]:
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra, ca) == (rb, cb):
        return ra, ca
    if (rb, cb) == (1, 1):
        return ra, ca
    if (ra, ca) == (1, 1):
        return rb, cb
    if rb == 1 and cb == ca:
        return ra, ca
    if ra == 1 and ca == cb:
        return rb, cb
    if cb == 1 and rb == ra:
        return ra, ca
    if ca == 1 and ra == rb:
        return rb, cb
    raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    rows, cols = shape
    if rows == 1:
        grad = grad.sum(axis=0, keepdims=True)
    if cols == 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    out = Node(a.value + b.value, (a, b), "add")

    def _backward():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    out._backward = _backward
    return out


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)
    out = Node(a.value - b.value, (a, b), "sub")

    def _backward():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.shape))

    out._backward = _backward
    return out


def neg(a) -> Node:
    a = as_node(a)
    out = Node(-a.value, (a,), "neg")

    def _backward():
        _accumulate(a, -out.grad)

    out._backward = _backward
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    out = Node(a.value * b.value, (a, b), "mul")

    def _backward():
        _accumulate(a, _unbroadcast(out.grad * b.value, a.shape))
        _accumulate(b, _unbroadcast(out.grad * a.value, b.shape))

    out._backward = _backward
    return out


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("div", a, b)
    out = Node(a.value / b.value, (a, b), "div")

    def _backward():
        _accumulate(a, _unbroadcast(out.grad / b.value, a.shape))
        _accumulate(b, _unbroadcast(-out.grad * a.value / (b.value * b.value), b.shape))

    out._backward = _backward
    return out


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = Node(a.value @ b.value, (a, b), "matmul")

    def _backward():
        _accumulate(a, out.grad @ b.value.T)
        _accumulate(b, a.value.T @ out.grad)

    out._backward = _backward
    return out


def transpose(a) -> Node:
    a = as_node(a)
    out = Node(a.value.T.copy(), (a,), "transpose")

    def _backward():
        _accumulate(a, out.grad.T)

    out._backward = _backward
    return out


def total(a) -> Node:
    """Sum of all entries, as a 1x1 node."""
    a = as_node(a)
    out = Node(a.value.sum(), (a,), "sum")

    def _backward():
        _accumulate(a, np.full(a.shape, out.grad[0, 0]))

    out._backward = _backward
    return out


def mean(a) -> Node:
    a = as_node(a)
    n = a.value.size
    out = Node(a.value.mean(), (a,), "mean")

    def _backward():
        _accumulate(a, np.full(a.shape, out.grad[0, 0] / n))

    out._backward = _backward
    return out


def row_sum(a) -> Node:
    """Sum across columns, giving an r x 1 column."""
    a = as_node(a)
    out = Node(a.value.sum(axis=1, keepdims=True), (a,), "row_sum")

    def _backward():
        _accumulate(a, np.broadcast_to(out.grad, a.shape).copy())

    out._backward = _backward
    return out


def square(a) -> Node:
    a = as_node(a)
    out = Node(a.value * a.value, (a,), "square")

    def _backward():
        _accumulate(a, 2.0 * a.value * out.grad)

    out._backward = _backward
    return out


def sqrt(a) -> Node:
    a = as_node(a)
    out = Node(np.sqrt(a.value), (a,), "sqrt")

    def _backward():
        _accumulate(a, out.grad * 0.5 / out.value)

    out._backward = _backward
    return out


def exp(a) -> Node:
    a = as_node(a)
    out = Node(np.exp(a.value), (a,), "exp")

    def _backward():
        _accumulate(a, out.grad * out.value)

    out._backward = _backward
    return out


def log(a) -> Node:
    a = as_node(a)
    out = Node(np.log(a.value), (a,), "log")

    def _backward():
        _accumulate(a, out.grad / a.value)

    out._backward = _backward
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(a) -> Node:
    """log(1 + e^x), computed without overflow."""
    a = as_node(a)
    out = Node(np.logaddexp(0.0, a.value), (a,), "softplus")

    def _backward():
        _accumulate(a, out.grad * _sigmoid(a.value))

    out._backward = _backward
    return out


def relu(a) -> Node:
    a = as_node(a)
    out = Node(np.maximum(a.value, 0.0), (a,), "relu")

    def _backward():
        _accumulate(a, out.grad * (a.value > 0))

    out._backward = _backward
    return out


def absolute(a) -> Node:
    a = as_node(a)
    out = Node(np.abs(a.value), (a,), "abs")

    def _backward():
        _accumulate(a, out.grad * np.sign(a.value))

    out._backward = _backward
    return out


def huber(a, delta: float) -> Node:
    """Elementwise Huber: 0.5 x^2 for |x| < delta, delta (|x| - delta/2) otherwise."""
    a = as_node(a)
    x = a.value
    inside = np.abs(x) < delta
    out = Node(np.where(inside, 0.5 * x * x, delta * (np.abs(x) - 0.5 * delta)), (a,), "huber")

    def _backward():
        _accumulate(a, out.grad * np.where(inside, x, delta * np.sign(x)))

    out._backward = _backward
    return out


def masked_softmax(a, mask: np.ndarray) -> Node:
    """Row-wise softmax over entries where `mask` is true; masked entries are exactly 0."""
    a = as_node(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError("masked_softmax", a.shape, mask.shape)
    if not mask.any(axis=1).all():
        raise ShapeError("masked_softmax: row with no unmasked entry", a.shape)
    shifted = np.where(mask, a.value, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = Node(e / e.sum(axis=1, keepdims=True), (a,), "masked_softmax")

    def _backward():
        y = out.value
        dot = (out.grad * y).sum(axis=1, keepdims=True)
        _accumulate(a, y * (out.grad - dot))

    out._backward = _backward
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Node:
    """Row-wise normalisation followed by a learned (1 x c) gain and bias."""
    a, gain, bias = as_node(a), as_node(gain), as_node(bias)
    cols = a.shape[1]
    if gain.shape != (1, cols) or bias.shape != (1, cols):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    mu = a.value.mean(axis=1, keepdims=True)
    centered = a.value - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv
    out = Node(xhat * gain.value + bias.value, (a, gain, bias), "layer_norm")

    def _backward():
        g = out.grad
        _accumulate(gain, (g * xhat).sum(axis=0, keepdims=True))
        _accumulate(bias, g.sum(axis=0, keepdims=True))
        dxhat = g * gain.value
        dx = inv / cols * (
            cols * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        _accumulate(a, dx)

    out._backward = _backward
    return out


def concat_rows(nodes: Iterable) -> Node:
    nodes = [as_node(n) for n in nodes]
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError("concat_rows", *(n.shape for n in nodes))
    out = Node(np.vstack([n.value for n in nodes]), nodes, "concat_rows")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def _backward():
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accumulate(n, out.grad[lo:hi])

    out._backward = _backward
    return out


def concat_cols(nodes: Iterable) -> Node:
    nodes = [as_node(n) for n in nodes]
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise ShapeError("concat_cols", *(n.shape for n in nodes))
    out = Node(np.hstack([n.value for n in nodes]), nodes, "concat_cols")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def _backward():
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accumulate(n, out.grad[:, lo:hi])

    out._backward = _backward
    return out


def slice_row(a, index: int) -> Node:
    a = as_node(a)
    if not -a.shape[0] <= index < a.shape[0]:
        raise ShapeError(f"slice_row[{index}]", a.shape)
    out = Node(a.value[index : index + 1 if index != -1 else None].copy(), (a,), "slice_row")

    def _backward():
        grad = np.zeros_like(a.value)
        grad[index] = out.grad[0]
        _accumulate(a, grad)

    out._backward = _backward
    return out


def gather_rows(a, index: np.ndarray) -> Node:
    """Rows of `a` picked by an integer index vector (rows may repeat)."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError("gather_rows", a.shape, index.shape)
    out = Node(a.value[index], (a,), "gather_rows")

    def _backward():
        if a.requires_grad:
            np.add.at(a.grad, index, out.grad)

    out._backward = _backward
    return out


def segment_sum(a, segment_ids: np.ndarray, n_segments: int) -> Node:
    """Sum rows of `a` that share a segment id; row k of the result is segment k."""
    a = as_node(a)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if segment_ids.shape != (a.shape[0],):
        raise ShapeError("segment_sum", a.shape, segment_ids.shape)
    value = np.zeros((n_segments, a.shape[1]))
    np.add.at(value, segment_ids, a.value)
    out = Node(value, (a,), "segment_sum")

    def _backward():
        _accumulate(a, out.grad[segment_ids])

    out._backward = _backward
    return out


def reshape(a, rows: int, cols: int) -> Node:
    a = as_node(a)
    if rows * cols != a.value.size:
        raise ShapeError("reshape", a.shape, (rows, cols))
    out = Node(a.value.reshape(rows, cols), (a,), "reshape")

    def _backward():
        _accumulate(a, out.grad.reshape(a.shape))

    out._backward = _backward
    return out


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node):
    if root.shape != (1, 1):
        raise ShapeError("backward: root must be 1x1", root.shape)
    order = _topological_order(root)
    for node in order:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.value)
    root.grad = root.grad + 1.0 if root.is_leaf else np.ones((1, 1))
    for node in reversed(order):
        if node.requires_grad:
            node._backward()
