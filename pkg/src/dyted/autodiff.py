"""A small reverse-mode autodiff engine over dense float64 arrays.

Every primitive computes its forward value eagerly and records a
vector-Jacobian product (VJP) closure. :func:`backward` walks the recorded
graph in reverse topological order and returns a fresh gradient table, so the
tape itself is never mutated and can be differentiated repeatedly.

Broadcasting is limited to scalar-with-tensor; row-vector biases go through
:func:`bias_add`. Sparse matrices only appear as constant left operands of
:func:`spmm`.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor", "ShapeError", "GradientTable", "tensor", "parameter", "constant",
    "matmul", "spmm", "add", "sub", "mul", "scale", "bias_add", "concat", "reshape",
    "take", "sigmoid", "tanh", "exp", "log", "log_sigmoid", "softmax", "clip",
    "sum", "mean", "l2_norm", "cosine_similarity", "rowwise_dot",
    "backward", "grad_check", "format_graph",
]

_next_id = itertools.count()


class ShapeError(ValueError):
    """Operand shapes incompatible with an operation."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class Tensor:
    """Dense array, optionally tracked on the gradient tape.

    A tensor is *tracked* when it is a parameter (``requires_grad=True``) or
    was produced by a primitive with at least one tracked input.
    """

    __slots__ = ("data", "requires_grad", "id", "op", "_parents", "_vjp", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_next_id)
        self.op = op
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return len(self.data)

    # operator sugar -------------------------------------------------------
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

    def __truediv__(self, c):
        if isinstance(c, Tensor):
            raise TypeError("division only by python scalars")
        return scale(self, 1.0 / c)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents, vjp) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, True, op=op, parents=parents, vjp=vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_elementwise(op, a: Tensor, b: Tensor):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} differ (only scalar broadcasting)")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def bias_add(x, b) -> Tensor:
    """``x + b`` for ``x`` of shape ``(n, k)`` and a bias row ``b`` of shape ``(k,)``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError("bias_add", f"cannot add bias {b.shape} to {x.shape}")
    return _make(x.data + b.data, "bias_add", (x, b), lambda g: (g, g.sum(axis=0)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, "matmul", (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def spmm(A: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    x = _as_tensor(x)
    if x.ndim != 2 or A.shape[1] != x.shape[0]:
        raise ShapeError("spmm", f"cannot multiply sparse {A.shape} by {x.shape}")
    At = A.T.tocsr()
    return _make(np.asarray(A @ x.data), "spmm", (x,), lambda g: (np.asarray(At @ g),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last axis, or stack rows with ``axis=0``."""
    xs = [_as_tensor(x) for x in xs]
    nd = xs[0].ndim
    if axis not in (-1, nd - 1, 0):
        raise ShapeError("concat", "only the first or last axis is supported")
    axis = axis % nd
    other = [x.shape[:axis] + x.shape[axis + 1:] for x in xs]
    if any(x.ndim != nd for x in xs) or any(o != other[0] for o in other):
        raise ShapeError("concat", f"incompatible shapes: {[x.shape for x in xs]}")
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), "concat", tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def take(x, key) -> Tensor:
    """Slice or gather ``x[key]``; repeated indices accumulate on the way back."""
    x = _as_tensor(x)
    try:
        out = x.data[key]
    except IndexError as exc:
        raise ShapeError("take", str(exc)) from None

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), "take", (x,), vjp)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _make(y, "exp", (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore"):
        y = np.log(x.data)
    return _make(y, "log", (x,), lambda g: (g / x.data,))


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` without overflow for large ``|x|``."""
    x = _as_tensor(x)
    y = -np.logaddexp(0.0, -x.data)
    return _make(y, "log_sigmoid", (x,), lambda g: (g * _sigmoid(-x.data),))


def softmax(x) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries receive probability 0."""
    x = _as_tensor(x)
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, "softmax", (x,),
                 lambda g: (y * (g - np.sum(g * y, axis=-1, keepdims=True)),))


def clip(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), "clip", (x,), lambda g: (g * inside,))


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)
    if axis is None:
        return _make(np.asarray(x.data.sum()), "sum", (x,),
                     lambda g: (np.broadcast_to(g, x.shape).copy(),))
    axis = axis % x.ndim
    return _make(x.data.sum(axis=axis), "sum", (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean", "empty reduction")
    return scale(sum(x, axis), 1.0 / count)


def l2_norm(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    n = np.sqrt(np.sum(x.data ** 2, axis=axis))

    def vjp(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.expand_dims(g / safe * (n > 0), axis) * x.data,)

    return _make(n, "l2_norm", (x,), vjp)


def rowwise_dot(a, b) -> Tensor:
    """Inner products of matching rows: ``(n, k), (n, k) -> (n,)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("rowwise_dot", f"row pairs need equal 2-d shapes, got {a.shape}, {b.shape}")
    return _make(np.einsum("ij,ij->i", a.data, b.data), "rowwise_dot", (a, b),
                 lambda g: (g[:, None] * b.data, g[:, None] * a.data))


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine similarity of matching rows: ``(n, k), (n, k) -> (n,)``.

    Norms below ``eps`` are clamped to ``eps``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("cosine_similarity", f"row pairs need equal 2-d shapes, got {a.shape}, {b.shape}")
    na_raw = np.linalg.norm(a.data, axis=1)
    nb_raw = np.linalg.norm(b.data, axis=1)
    na = np.maximum(na_raw, eps)
    nb = np.maximum(nb_raw, eps)
    dot = np.einsum("ij,ij->i", a.data, b.data)
    c = dot / (na * nb)

    def vjp(g):
        ga = b.data / (na * nb)[:, None] - (c * (na_raw > eps) / na ** 2)[:, None] * a.data
        gb = a.data / (na * nb)[:, None] - (c * (nb_raw > eps) / nb ** 2)[:, None] * b.data
        return (g[:, None] * ga, g[:, None] * gb)

    return _make(c, "cosine_similarity", (a, b), vjp)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

class GradientTable(dict):
    """Mapping from tensor id to gradient array; also indexable by the tensor."""

    def __getitem__(self, key):
        return super().__getitem__(key.id if isinstance(key, Tensor) else key)

    def __contains__(self, key):
        return super().__contains__(key.id if isinstance(key, Tensor) else key)

    def get(self, key, default=None):
        return super().get(key.id if isinstance(key, Tensor) else key, default)

    def for_tensor(self, t: Tensor) -> np.ndarray:
        """Gradient of ``t``, or zeros when the loss does not depend on it."""
        return self.get(t, np.zeros_like(t.data))


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> GradientTable:
    """Gradients of a scalar ``loss`` with respect to every tracked ancestor.

    Raises
    ------
    ValueError
        If ``loss`` is not a scalar.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = GradientTable()
    if not loss.requires_grad:
        return grads
    dict.__setitem__(grads, loss.id, np.ones_like(loss.data))
    for node in reversed(_topological_order(loss)):
        g = dict.get(grads, node.id)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            prev = dict.get(grads, parent.id)
            dict.__setitem__(grads, parent.id, pg if prev is None else prev + pg)
    return grads


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor. The error per
    component is ``|g_ad - g_fd| / (|g_fd| + 1e-8)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)
    leaf = Tensor(x0.copy(), requires_grad=True)
    g_ad = backward(f(leaf)).for_tensor(leaf)
    g_fd = np.zeros_like(x0)
    flat = x0.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x0.copy())).item()
        flat[i] = orig - eps
        fm = f(Tensor(x0.copy())).item()
        flat[i] = orig
        fd_flat[i] = (fp - fm) / (2.0 * eps)
    if g_fd.size == 0:
        return 0.0
    return float(np.max(np.abs(g_ad - g_fd) / (np.abs(g_fd) + 1e-8)))


def format_graph(root: Tensor) -> str:
    """Text dump of the tracked operation graph below ``root``."""
    lines = []
    for node in _topological_order(root):
        parents = ", ".join(f"#{p.id}" for p in node._parents if p.requires_grad)
        lines.append(f"#{node.id} {node.op} {node.shape}" + (f" <- {parents}" if parents else ""))
    return "\n".join(lines)
