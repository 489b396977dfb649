"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is rebuilt on every forward pass. Each op output remembers its
operands and a closure mapping the output gradient to operand gradients.
Only leaf tensors with ``requires_grad`` set ever accumulate into ``.grad``;
intermediate gradients live in a scratch dict for the duration of one
``backward`` call, so several backward passes over the same graph (with the
leaf flags toggled in between) compose by summation.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_creation = itertools.count()

NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateRowError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._id = next(_creation)

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every flagged leaf reachable from self."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {self.shape}")

        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes:
                continue
            nodes[t._id] = t
            stack.extend(t._parents)
        order = [nodes[k] for k in sorted(nodes)]

        # a node needs a gradient iff some flagged leaf sits beneath it
        needs: dict[int, bool] = {}
        for t in order:
            if t._parents:
                needs[t._id] = any(needs[p._id] for p in t._parents)
            else:
                needs[t._id] = t.requires_grad
        if not needs[self._id]:
            return

        pending: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for t in reversed(order):
            g = pending.pop(t._id, None)
            if g is None or not needs[t._id]:
                continue
            if not t._parents:
                t.grad += g
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not needs[p._id]:
                    continue
                if p._id in pending:
                    pending[p._id] = pending[p._id] + pg
                else:
                    pending[p._id] = pg

    # -- operator sugar ------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return tmean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    # row-wise bias: [m x n] with [n] or [1 x n]
    if len(a.shape) == 2 and b.shape in ((a.shape[1],), (1, a.shape[1])):
        return
    if len(b.shape) == 2 and a.shape in ((b.shape[1],), (1, b.shape[1])):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise binary ------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(a.data - b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor(ad * bd, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor(ad @ bd, _parents=(a, b), _backward=lambda g: (g @ bd.T, ad.T @ g))


# -- elementwise unary ---------------------------------------------------------
def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a nonpositive value")
    ad = a.data
    return Tensor(np.log(ad), _parents=(a,), _backward=lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor(ad * ad, _parents=(a,), _backward=lambda g: (2.0 * g * ad,))


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor(np.abs(a.data), _parents=(a,), _backward=lambda g: (g * sign,))


_UNARY = {"relu": relu, "exp": exp, "log": log, "square": square, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(a, kind: str, b=None) -> Tensor:
    """Dispatch by name, e.g. ``elementwise(x, "relu")`` or ``elementwise(x, "mul", y)``."""
    if kind in _UNARY:
        return _UNARY[kind](as_tensor(a))
    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} needs a second operand")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# -- shape / reduction ---------------------------------------------------------
def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, _parents=(a,), _backward=lambda g: (g.T,))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return Tensor(a.data.sum(), _parents=(a,), _backward=lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return Tensor(out, _parents=(a,),
                  _backward=lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return Tensor(a.data.mean(), _parents=(a,), _backward=lambda g: (np.full(shape, float(g) / n),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])
    return Tensor(np.concatenate([p.data for p in parts], axis=1), _parents=tuple(parts),
                  _backward=lambda g: tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts))))


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.data[idx], _parents=(a,), _backward=back)


# -- fused row ops -------------------------------------------------------------
def l2_normalize_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a matrix, got {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if np.any(norms < NORM_EPS):
        bad = np.flatnonzero(norms[:, 0] < NORM_EPS).tolist()
        raise DegenerateRowError(f"rows {bad} have norm below {NORM_EPS}")
    y = a.data / norms

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return Tensor(y, _parents=(a,), _backward=back)


def log_softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


# -- parameter helpers ---------------------------------------------------------
def set_requires_grad(params: Iterable[Tensor], flag: bool) -> None:
    for p in params:
        p.requires_grad = bool(flag)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
