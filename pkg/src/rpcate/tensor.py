"""Dense f64 tensors with a reverse-mode gradient tape.

Only the operations the RP-CATE graph needs are provided. Every op checks
its output for NaN/Inf and raises :class:`NonFiniteError` instead of
propagating garbage.

Usage::

    W = Tensor(np.zeros((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(W)
    tape.backward(loss)
    W.grad  # ones
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numba
import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scale",
    "sigmoid",
    "relu",
    "elementwise",
    "softmax_lastaxis",
    "pool_spatial",
    "gather_rows",
    "reshape",
    "sum_all",
    "mean_squared_error",
    "global_norm",
    "recurrent_scan",
]

MAX_NDIM = 4


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim > MAX_NDIM:
            raise ValueError(f"tensors support at most {MAX_NDIM} axes, got {arr.ndim}")
        if any(s < 1 for s in arr.shape):
            raise ValueError(f"all axes must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple, backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records differentiable operations in execution order.

    A tape is bound to the thread that entered it. Operations whose inputs
    do not require gradients are not recorded.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] = ()) -> None:
        """Populate ``.grad`` on every tensor reachable from ``loss``.

        Tensors in ``wrt`` that the loss does not depend on get a zero grad.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            node.out.grad = None
            for p in node.parents:
                p.grad = None
        wrt = list(wrt)
        for t in wrt:
            t.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg
        for t in wrt:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def _finish(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires_grad
    out.grad = None
    out.name = None
    tape = _active_tape()
    if requires_grad and tape is not None:
        tape.nodes.append(_Node(out, tuple(parents), backward))
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    """True when ``b`` is a 1×n bias row to be added to every row of ``a``."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 2 and b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only 1×n row broadcast allowed)")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _finish(A @ B, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1×n row broadcast over the rows of ``a``."""
    row = _check_broadcast(a, b, "add")

    def backward(g):
        return g, (g.sum(axis=0, keepdims=True) if row else g)

    return _finish(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        return g, -g

    return _finish(a.data - b.data, (a, b), backward, "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    A, B = a.data, b.data

    def backward(g):
        return g * B, g * A

    return _finish(A * B, (a, b), backward, "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _finish(a.data * c, (a,), backward, "scale")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _finish(s, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # relu'(0) = 0

    def backward(g):
        return (g * mask,)

    return _finish(np.where(mask, a.data, 0.0), (a,), backward, "relu")


_UNARY = {"sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": add, "hadamard": hadamard}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch by name to ``add``, ``hadamard``, ``sigmoid`` or ``relu``."""
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def softmax_lastaxis(a: Tensor) -> Tensor:
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _finish(s, (a,), backward, "softmax_lastaxis")


def pool_spatial(p: Tensor, mode: str) -> Tensor:
    """Global max/avg pool over the two k×k axes of an m×k×k×n tensor, squeezed to m×n."""
    if p.data.ndim != 4 or p.shape[1] != p.shape[2]:
        raise ValueError(f"pool_spatial expects m×k×k×n, got {p.shape}")
    m, k, _, n = p.shape
    flat = p.data.reshape(m, k * k, n)
    if mode == "avg":
        out = flat.mean(axis=1)

        def backward(g):
            return (np.broadcast_to(g[:, None, :] / (k * k), flat.shape).reshape(p.shape),)

    elif mode == "max":
        # np.argmax returns the first maximal element in row-major scan order
        arg = flat.argmax(axis=1)
        out = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]

        def backward(g):
            gin = np.zeros_like(flat)
            np.put_along_axis(gin, arg[:, None, :], g[:, None, :], axis=1)
            return (gin.reshape(p.shape),)

    else:
        raise ValueError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    return _finish(out, (p,), backward, f"pool_spatial[{mode}]")


def gather_rows(a: Tensor, index) -> Tensor:
    """Row ``j`` of the output is row ``index[j]`` of ``a``; gradients scatter back additively."""
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    m = a.shape[0]
    if idx.size == 0:
        raise ValueError("gather_rows: empty index")
    if idx.min() < 0 or idx.max() >= m:
        raise IndexError(f"gather_rows: index out of range for {m} rows")
    src = a.data

    def backward(g):
        if src.ndim == 1:
            return (np.bincount(idx, weights=g, minlength=m),)
        flat = g.reshape(g.shape[0], -1)
        gin = np.empty((m, flat.shape[1]))
        for c in range(flat.shape[1]):
            gin[:, c] = np.bincount(idx, weights=flat[:, c], minlength=m)
        return (gin.reshape(src.shape),)

    return _finish(src[idx], (a,), backward, "gather_rows")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    return _finish(a.data.reshape(shape), (a,), backward, "reshape")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.full(shape, g.reshape(-1)[0]),)

    return _finish(np.array([[a.data.sum()]]), (a,), backward, "sum_all")


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """(1/m)·Σ(target − pred)² as a 1×1 tensor."""
    _check_same_shape(pred, target, "mean_squared_error")
    diff = pred.data - target.data
    m = diff.shape[0]

    def backward(g):
        gp = (2.0 / m) * diff * g.reshape(-1)[0]
        return gp, -gp

    return _finish(np.array([[(diff * diff).sum() / m]]), (pred, target), backward, "mse")


def global_norm(tensors: Sequence[Tensor], squared: bool = False) -> Tensor:
    """Euclidean norm of all tensors concatenated (or its square).

    The gradient of the unsquared norm at the origin is taken as zero.
    """
    tensors = tuple(tensors)
    sq = float(sum(np.sum(t.data * t.data) for t in tensors))
    if squared:
        value = sq

        def backward(g):
            c = 2.0 * g.reshape(-1)[0]
            return tuple(c * t.data for t in tensors)

    else:
        value = np.sqrt(sq)

        def backward(g):
            if value == 0.0:
                return tuple(np.zeros_like(t.data) for t in tensors)
            c = g.reshape(-1)[0] / value
            return tuple(c * t.data for t in tensors)

    return _finish(np.array([[value]]), tensors, backward, "global_norm")


@numba.njit(cache=True)
def _scan_forward(X, W):
    m, d = X.shape
    H = np.empty_like(X)
    h = np.zeros(d)
    for i in range(m):
        for j in range(d):
            acc = X[i, j]
            for q in range(d):
                acc += h[q] * W[q, j]
            H[i, j] = 0.5 * (1.0 + np.tanh(0.5 * acc))
        h = H[i]
    return H


@numba.njit(cache=True)
def _scan_backward(H, W, G):
    m, d = H.shape
    dpre = np.empty_like(H)
    carry = np.zeros(d)
    for i in range(m - 1, -1, -1):
        for j in range(d):
            hij = H[i, j]
            dpre[i, j] = (G[i, j] + carry[j]) * hij * (1.0 - hij)
        for q in range(d):
            acc = 0.0
            for j in range(d):
                acc += dpre[i, j] * W[q, j]
            carry[q] = acc
    return dpre


def recurrent_scan(xu: Tensor, w: Tensor) -> Tensor:
    """Sigmoid recurrence ``h_i = σ(xu_i + h_{i-1}·W)`` with ``h_0 = 0``.

    ``xu`` holds the precomputed input projections (m×d), ``w`` is the d×d
    recurrent matrix. Backward is backpropagation through time.
    """
    if xu.data.ndim != 2 or w.shape != (xu.shape[1], xu.shape[1]):
        raise ValueError(f"recurrent_scan: shape mismatch {xu.shape} vs W {w.shape}")
    W = np.ascontiguousarray(w.data)
    H = _scan_forward(np.ascontiguousarray(xu.data), W)

    def backward(g):
        dpre = _scan_backward(H, W, np.ascontiguousarray(g))
        return dpre, H[:-1].T @ dpre[1:]

    return _finish(H, (xu, w), backward, "recurrent_scan")
