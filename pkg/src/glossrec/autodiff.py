"""Dense float64 tensors with reverse-mode automatic differentiation.

Eagerly built computation graphs over numpy arrays. Each operation records
the values it produced, its parent tensors, and a closure that applies the
chain rule; ``Tensor.backward()`` walks the recorded graph exactly once in
reverse topological order and accumulates gradients additively into every
leaf that requires them.

Design constraints honored throughout:

* double precision only — the finite-difference oracle depends on it;
* non-finite results abort the operation (``NonFiniteError``) instead of
  propagating, with the single documented exception of ``log_sum_exp``,
  where ``-inf`` encodes the log of an exactly-zero probability;
* gradients accumulate; clearing them is the optimizer's job.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    GraphConsumedError,
    NonFiniteError,
    NotScalarError,
    ShapeMismatchError,
)

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _ensure_finite(values: np.ndarray, where: str, allow_neg_inf: bool = False) -> None:
    if allow_neg_inf:
        bad = np.isnan(values).any() or np.isposinf(values).any()
    else:
        bad = not np.isfinite(values).all()
    if bad:
        raise NonFiniteError(f"{where} produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``values`` is a row-major numpy array; ``grad`` (same shape) is
    allocated lazily during backward. Tensors created directly are graph
    leaves; tensors returned by operations carry the backward closure that
    links them to their parents.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._consumed = False

    @classmethod
    def _from_op(cls, values: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[], None] | None) -> "Tensor":
        out = cls.__new__(cls)
        out.values = values
        out.grad = None
        out._consumed = False
        if backward is not None:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ----------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def _grad_buffer(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run reverse-mode differentiation from this scalar root.

        Visits each recorded node exactly once. Raises ``NotScalarError``
        for non-scalar roots and ``GraphConsumedError`` if the same root is
        differentiated twice.
        """
        if self.values.size != 1:
            raise NotScalarError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumedError("backward() already ran on this root")
        self._consumed = True

        # Iterative post-order DFS; graphs routinely exceed the recursion limit.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))

        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _track(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    values = a.values + b.values
    _ensure_finite(values, "add")
    if not _track(a, b):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g, a.values.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g, b.values.shape))

    out = Tensor._from_op(values, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    values = a.values * b.values
    _ensure_finite(values, "mul")
    if not _track(a, b):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g * a.values, b.values.shape))

    out = Tensor._from_op(values, (a, b), backward)
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    values = a.values / b.values
    _ensure_finite(values, "div")
    if not _track(a, b):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g / b.values, a.values.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(-g * a.values / (b.values * b.values), b.values.shape))

    out = Tensor._from_op(values, (a, b), backward)
    return out


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    values = a.values ** p
    _ensure_finite(values, "power")
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        grad = p * a.values ** (p - 1.0) * out.grad
        _ensure_finite(grad, "power gradient")
        a._accum(grad)

    out = Tensor._from_op(values, (a,), backward)
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    values = np.exp(a.values)
    _ensure_finite(values, "exp")
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad * values)

    out = Tensor._from_op(values, (a,), backward)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.values <= 0.0):
        raise NonFiniteError("log of non-positive value")
    values = np.log(a.values)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad / a.values)

    out = Tensor._from_op(values, (a,), backward)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    values = np.tanh(a.values)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad * (1.0 - values * values))

    out = Tensor._from_op(values, (a,), backward)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form is stable for large |x| in either direction
    values = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad * values * (1.0 - values))

    out = Tensor._from_op(values, (a,), backward)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    values = np.maximum(a.values, 0.0)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad * (a.values > 0.0))

    out = Tensor._from_op(values, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# matrix product


def matmul(a, b) -> Tensor:
    """Batched matrix product over the trailing two axes.

    Leading axes broadcast; the inner dimensions must agree exactly.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeMismatchError("matmul needs at least 1-d operands")
    if a.values.shape[-1] != b.values.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatchError(
            f"matmul inner dims differ: {a.values.shape} @ {b.values.shape}")
    values = np.matmul(a.values, b.values)
    _ensure_finite(values, "matmul")
    if not _track(a, b):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        if a.requires_grad or a._parents:
            ga = np.matmul(g, b.values.swapaxes(-1, -2))
            a._accum(_unbroadcast(ga, a.values.shape))
        if b.requires_grad or b._parents:
            gb = np.matmul(a.values.swapaxes(-1, -2), g)
            b._accum(_unbroadcast(gb, b.values.shape))

    out = Tensor._from_op(values, (a, b), backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    values = a.values.sum(axis=axis, keepdims=keepdims)
    values = np.asarray(values)
    _ensure_finite(values, "sum")
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.values.shape))

    out = Tensor._from_op(values, (a,), backward)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.values.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.values.shape[i] for i in axis]))
    else:
        n = a.values.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def log_sum_exp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) with max-subtraction stability.

    ``-inf`` entries are permitted and act as log-zero probabilities; the
    reduction of an all ``-inf`` slice is ``-inf``. NaN and ``+inf`` remain
    errors.
    """
    a = _as_tensor(a)
    _ensure_finite(a.values, "log_sum_exp input", allow_neg_inf=True)
    values = logsumexp_np(a.values, axis=axis, keepdims=True)
    # zero weight (not NaN) where the whole slice carries no mass
    lse_safe = np.where(np.isneginf(values), 0.0, values)
    softmax = np.exp(a.values - lse_safe)
    out_values = values if keepdims else np.asarray(values.squeeze(axis))
    _ensure_finite(out_values, "log_sum_exp", allow_neg_inf=True)
    if not _track(a):
        return Tensor._from_op(out_values, (), None)

    def backward():
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(g * softmax)

    out = Tensor._from_op(out_values, (a,), backward)
    return out


def logsumexp_np(values: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    """Plain-array log-sum-exp; tolerates -inf, returns -inf on empty mass."""
    values = np.asarray(values, dtype=np.float64)
    m = np.max(values, axis=axis, keepdims=True)
    m_safe = np.where(np.isneginf(m), 0.0, m)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(values - m_safe), axis=axis, keepdims=True))
    result = m_safe + s
    result = np.where(np.isneginf(m), -np.inf, result)
    if not keepdims:
        result = np.asarray(result.squeeze(axis) if axis is not None else result.squeeze())
    return result


def softmax_last(a) -> Tensor:
    """Row softmax over the last axis, computed via max subtraction."""
    a = _as_tensor(a)
    _ensure_finite(a.values, "softmax input")
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=-1, keepdims=True)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        dot = (g * values).sum(axis=-1, keepdims=True)
        a._accum(values * (g - dot))

    out = Tensor._from_op(values, (a,), backward)
    return out


def log_softmax_last(a) -> Tensor:
    """Numerically stable log(softmax(x)) over the last axis."""
    a = _as_tensor(a)
    _ensure_finite(a.values, "log_softmax input")
    lse = logsumexp_np(a.values, axis=-1, keepdims=True)
    values = a.values - lse
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        g = out.grad
        total = g.sum(axis=-1, keepdims=True)
        a._accum(g - np.exp(values) * total)

    out = Tensor._from_op(values, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# shape and gather ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    values = a.values.reshape(shape)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad.reshape(a.values.shape))

    out = Tensor._from_op(values, (a,), backward)
    return out


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    values = np.transpose(a.values, axes)
    if not _track(a):
        return Tensor._from_op(values, (), None)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward():
        a._accum(np.transpose(out.grad, inverse))

    out = Tensor._from_op(values, (a,), backward)
    return out


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    values = a.values.swapaxes(ax1, ax2)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._accum(out.grad.swapaxes(ax1, ax2))

    out = Tensor._from_op(values, (a,), backward)
    return out


def take(a, idx) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof) as a graph operation."""
    a = _as_tensor(a)
    values = np.array(a.values[idx])
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        a._grad_buffer()[idx] += out.grad

    out = Tensor._from_op(values, (a,), backward)
    return out


def take_rows(table, ids) -> Tensor:
    """Row gather ``table[ids]`` with scatter-add backward (embedding lookup)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    values = table.values[ids]
    if not _track(table):
        return Tensor._from_op(values, (), None)

    def backward():
        np.add.at(table._grad_buffer(), ids, out.grad)

    out = Tensor._from_op(values, (table,), backward)
    return out


def take_along_last(a, idx) -> Tensor:
    """Pick one entry per row along the last axis (cross-entropy gather)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    expanded = np.expand_dims(idx, -1)
    values = np.take_along_axis(a.values, expanded, axis=-1).squeeze(-1)
    values = np.asarray(values)
    if not _track(a):
        return Tensor._from_op(values, (), None)

    def backward():
        g = np.zeros_like(a.values)
        np.put_along_axis(g, expanded, np.expand_dims(out.grad, -1), axis=-1)
        a._accum(g)

    out = Tensor._from_op(values, (a,), backward)
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    values = np.concatenate([t.values for t in ts], axis=axis)
    if not (_GRAD_ENABLED and any(t.requires_grad for t in ts)):
        return Tensor._from_op(values, (), None)
    sizes = np.cumsum([t.values.shape[axis] for t in ts])[:-1]

    def backward():
        pieces = np.split(out.grad, sizes, axis=axis)
        for t, g in zip(ts, pieces):
            if t.requires_grad or t._parents:
                t._accum(g)

    out = Tensor._from_op(values, tuple(ts), backward)
    return out


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    values = np.stack([t.values for t in ts], axis=axis)
    if not (_GRAD_ENABLED and any(t.requires_grad for t in ts)):
        return Tensor._from_op(values, (), None)

    def backward():
        pieces = np.moveaxis(out.grad, axis, 0)
        for t, g in zip(ts, pieces):
            if t.requires_grad or t._parents:
                t._accum(g)

    out = Tensor._from_op(values, tuple(ts), backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic map from one tensor to a scalar tensor.
    The error at each coordinate is ``|analytic - numeric| / max(1, |analytic|)``;
    the maximum over coordinates is returned.
    """
    x0 = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    out.backward()
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad
    analytic = analytic.ravel()

    numeric = np.empty(x0.size)
    flat_base = x0.ravel()
    with no_grad():
        for i in range(x0.size):
            orig = flat_base[i]
            flat_base[i] = orig + h
            hi = float(f(Tensor(x0)).values)
            flat_base[i] = orig - h
            lo = float(f(Tensor(x0)).values)
            flat_base[i] = orig
            numeric[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
