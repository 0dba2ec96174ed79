"""Reverse-mode automatic differentiation over dense float64 arrays.

Every quantity the network computes is built from the small op set below.
Each op returns a new :class:`Tensor` that remembers its inputs and how to
push an output gradient back to them; :func:`backward` materializes the
tape for a scalar and walks it once in reverse topological order.

Scope is deliberately narrow: float64 only, no GPU, no sparse storage, and
only the broadcasting patterns the model needs (scalars, trailing (d,) row
vectors and (n, 1) column vectors against (n, d) matrices).
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "grad",
    "finite_diff_check",
    "finite_diff_norms",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "clip_min",
    "sum_",
    "concat",
    "gather",
    "embedding_row",
    "pick",
    "scatter",
    "col",
    "transpose",
    "softmax",
]

_GRAD_ENABLED = True
_ids = itertools.count()


class no_grad:
    """Context manager that suspends operation recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Dense float64 array plus the bookkeeping for reverse-mode gradients.

    A tensor is either a leaf (parameter or constant) or the output of a
    recorded operation, in which case ``parents`` holds its inputs and
    ``_push`` knows how to propagate an incoming gradient to them.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_push", "node_id")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), push=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = parents
        self._push = push
        self.node_id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants are lifted automatically
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Topologically ordered record of the operations reaching a root.

    ``records`` lists every non-leaf node exactly once, with each node's
    inputs appearing earlier in the list or being leaves; ``nodes`` is the
    same order including leaves.  Each record carries its operation id
    (``op``), input node ids (``parents``) and output node id (itself);
    saved activations live in the record's gradient closure.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes
        self.records = [n for n in nodes if n.parents]

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(nodes)


def backward(root: Tensor) -> Tape:
    """Run one reverse pass from a scalar root; returns the traced tape."""
    if root.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {root.data.shape}")
    tape = Tape.trace(root)
    for node in tape.nodes:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(tape.records):
        if node.grad is not None and node._push is not None:
            node._push(node.grad)
    return tape


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every named parameter.

    Parameters that do not appear on the loss's tape get zero gradients.
    """
    if loss.size != 1:
        raise ValueError("grad requires a scalar loss")
    for p in params.values():
        p.grad = None
    backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must be a deterministic closure over ``params``; it is
    evaluated twice up front and a mismatch is a contract violation.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with no_grad():
        first = float(loss_fn().data)
        second = float(loss_fn().data)
    if first != second:
        raise ValueError("loss_fn is not deterministic")

    analytic = grad(loss_fn(), params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        gflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            with no_grad():
                f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            err = abs(gflat[i] - numeric) / denom
            if err > worst:
                worst = err
    return worst


def finite_diff_norms(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter gradient error: ||analytic - numeric|| / max(norms, 1e-8).

    Aggregating per parameter tensor keeps the check meaningful for deep
    compositions whose smallest gradient entries sit below the float64
    cancellation noise of central differences; a real backward bug still
    shows up as an O(1) norm error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    analytic = grad(loss_fn(), params)
    out: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            with no_grad():
                f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        out[name] = float(np.linalg.norm(a - numeric) / denom)
    return out


# ---------------------------------------------------------------------------
# op helpers

def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _recording(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive operations

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data
    if not _recording(a, b):
        return Tensor(data)
    out = Tensor(data, True, "add", (a, b))

    def push(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    out._push = push
    return out


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data
    if not _recording(a, b):
        return Tensor(data)
    out = Tensor(data, True, "sub", (a, b))

    def push(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    out._push = push
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data
    if not _recording(a, b):
        return Tensor(data)
    out = Tensor(data, True, "mul", (a, b))
    ad, bd = a.data, b.data

    def push(g):
        _acc(a, _unbroadcast(g * bd, ad.shape))
        _acc(b, _unbroadcast(g * ad, bd.shape))

    out._push = push
    return out


def neg(a) -> Tensor:
    a = _lift(a)
    data = -a.data
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "neg", (a,))

    def push(g):
        _acc(a, -g)

    out._push = push
    return out


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data @ b.data
    if not _recording(a, b):
        return Tensor(data)
    out = Tensor(data, True, "matmul", (a, b))
    ad, bd = a.data, b.data

    def push(g):
        if ad.ndim == 1 and bd.ndim == 1:
            _acc(a, g * bd)
            _acc(b, g * ad)
        elif ad.ndim == 2 and bd.ndim == 2:
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))
        else:  # pragma: no cover - excluded by construction
            raise ValueError("unsupported matmul ranks")

    out._push = push
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    data = 1.0 / (1.0 + np.exp(-a.data))
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "sigmoid", (a,))
    s = data

    def push(g):
        _acc(a, g * s * (1.0 - s))

    out._push = push
    return out


def tanh(a) -> Tensor:
    a = _lift(a)
    data = np.tanh(a.data)
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "tanh", (a,))
    t = data

    def push(g):
        _acc(a, g * (1.0 - t * t))

    out._push = push
    return out


def exp(a) -> Tensor:
    a = _lift(a)
    data = np.exp(a.data)
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "exp", (a,))
    e = data

    def push(g):
        _acc(a, g * e)

    out._push = push
    return out


def log(a) -> Tensor:
    a = _lift(a)
    data = np.log(a.data)
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "log", (a,))
    ad = a.data

    def push(g):
        _acc(a, g / ad)

    out._push = push
    return out


def clip_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is zero where the floor binds."""
    a = _lift(a)
    data = np.maximum(a.data, floor)
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "clip_min", (a,))
    mask = a.data > floor

    def push(g):
        _acc(a, g * mask)

    out._push = push
    return out


def sum_(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    data = a.data.sum(axis=axis)
    if not _recording(a):
        return Tensor(data)
    out = Tensor(data, True, "sum", (a,))
    shape = a.data.shape

    def push(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    out._push = push
    return out


def concat(parts: Iterable) -> Tensor:
    """Concatenate 1-D vectors."""
    parts = [_lift(p) for p in parts]
    if any(p.data.ndim != 1 for p in parts):
        raise ValueError("concat expects 1-D vectors")
    data = np.concatenate([p.data for p in parts])
    if not _recording(*parts):
        return Tensor(data)
    out = Tensor(data, True, "concat", tuple(parts))
    sizes = [p.data.size for p in parts]

    def push(g):
        off = 0
        for p, n in zip(parts, sizes):
            _acc(p, g[off:off + n])
            off += n

    out._push = push
    return out


def gather(table, indices) -> Tensor:
    """Select rows of a 2-D table; gradient scatter-adds back."""
    table = _lift(table)
    idx = np.asarray(indices, dtype=np.intp)
    data = table.data[idx]
    if not _recording(table):
        return Tensor(data)
    out = Tensor(data, True, "gather", (table,))
    shape = table.data.shape

    def push(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        _acc(table, gt)

    out._push = push
    return out


def embedding_row(table, index: int) -> Tensor:
    """One row of a 2-D table as a (d,) vector; index -1 yields zeros.

    The -1 sentinel covers items outside the training vocabulary, which
    carry no learned embedding.
    """
    table = _lift(table)
    rows, dim = table.data.shape
    if index == -1:
        return Tensor(np.zeros(dim))
    if not 0 <= index < rows:
        raise ValueError(f"row index {index} out of range [0, {rows})")
    data = table.data[index]
    if not _recording(table):
        return Tensor(data.copy())
    out = Tensor(data.copy(), True, "embedding_row", (table,))

    def push(g):
        gt = np.zeros((rows, dim))
        gt[index] = g
        _acc(table, gt)

    out._push = push
    return out


def pick(v, index: int) -> Tensor:
    """One element of a 1-D vector as a scalar."""
    v = _lift(v)
    if v.data.ndim != 1:
        raise ValueError("pick expects a 1-D vector")
    data = v.data[index]
    if not _recording(v):
        return Tensor(data)
    out = Tensor(data, True, "pick", (v,))
    n = v.data.size

    def push(g):
        gv = np.zeros(n)
        gv[index] = g
        _acc(v, gv)

    out._push = push
    return out


def scatter(values, indices, size: int) -> Tensor:
    """Place a 1-D vector's entries at given positions of a zero vector."""
    values = _lift(values)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.zeros(size)
    data[idx] = values.data
    if not _recording(values):
        return Tensor(data)
    out = Tensor(data, True, "scatter", (values,))

    def push(g):
        _acc(values, g[idx])

    out._push = push
    return out


def col(v) -> Tensor:
    """Reshape a (n,) vector to an (n, 1) column for row-wise scaling."""
    v = _lift(v)
    data = v.data.reshape(-1, 1)
    if not _recording(v):
        return Tensor(data)
    out = Tensor(data, True, "col", (v,))

    def push(g):
        _acc(v, g.reshape(-1))

    out._push = push
    return out


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    data = a.data.T
    if not _recording(a):
        return Tensor(data.copy())
    out = Tensor(data.copy(), True, "transpose", (a,))

    def push(g):
        _acc(a, g.T)

    out._push = push
    return out


def softmax(v) -> Tensor:
    """Exp-normalize a 1-D vector; shift-invariant and order-preserving."""
    v = _lift(v)
    if v.data.ndim != 1:
        raise ValueError("softmax expects a 1-D vector")
    if v.data.size == 0:
        raise ValueError("softmax of an empty vector")
    z = v.data - v.data.max()
    e = np.exp(z)
    data = e / e.sum()
    if not _recording(v):
        return Tensor(data)
    out = Tensor(data, True, "softmax", (v,))
    s = data

    def push(g):
        _acc(v, s * (g - float(np.dot(g, s))))

    out._push = push
    return out
