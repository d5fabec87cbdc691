"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tensor` is *tracked* when it belongs to a :class:`Tape`; any
primitive with at least one tracked input records its output on that tape.
Untracked inputs behave as constants, so the same model code runs with or
without gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .. import kernels

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "tape", "name", "op")

    __array_priority__ = 100.0

    def __init__(self, data, *, tape: "Tape | None" = None, name: str | None = None,
                 parents: tuple = (), backward_fn: BackwardFn | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.name = name
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)


class Tape:
    """Records primitive applications in execution (hence topological) order."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def param(self, value, name: str) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        data = np.array(value, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"parameter {name!r} has non-finite entries")
        t = Tensor(data, tape=self, name=name, op="param")
        self.nodes.append(t)
        self.params[name] = t
        return t

    def backward(self, output: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``output`` for every parameter on this tape.

        Parameters with no path to ``output`` get zero gradients.
        """
        if output.data.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        grads = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        if output.tape is None:
            return grads
        if output.tape is not self:
            raise ValueError("output was recorded on a different tape")
        pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.op == "param":
                grads[node.name] += g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or parent.tape is None:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
        return grads


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """An untracked copy of ``x``; gradients stop here."""
    return Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64))


stop_gradient = constant


def _record(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError(f"{op}: inputs live on different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(data, op=op)
    out = Tensor(data, tape=tape, parents=parents, backward_fn=backward_fn, op=op)
    tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("multiply", a, b)
    return _record("multiply", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("divide", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("divide by zero")
    out = a.data / b.data
    return _record("divide", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return _record("matmul", a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _record("exponential", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("logarithm of non-positive value")
    return _record("logarithm", np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent``; non-integer exponents need ``a >= 0``."""
    a = as_tensor(a)
    p = float(exponent)
    if not p.is_integer() and np.any(a.data < 0):
        raise ValueError("fractional power of a negative value")
    out = a.data ** p
    return _record("power", out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def _check_rows(op: str, a: Tensor) -> None:
    if a.data.ndim != 2:
        raise ValueError(f"{op} expects a 2-d tensor, got shape {a.shape}")


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    _check_rows("row_softmax", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record("row_softmax", out, (a,), backward)


def row_log_softmax(a) -> Tensor:
    a = as_tensor(a)
    _check_rows("row_log_softmax", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _record("row_log_softmax", out, (a,),
                   lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def row_l2_normalize(a) -> Tensor:
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    a = as_tensor(a)
    _check_rows("row_l2_normalize", a)
    norms = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    out = a.data / safe

    def backward(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / safe,)

    return _record("row_l2_normalize", out, (a,), backward)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", np.asarray(out), (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise ValueError("mean of an empty tensor")
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows: index out of range")

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _record("gather_rows", a.data[idx], (a,), backward)


def neighbor_mean(indptr: np.ndarray, indices: np.ndarray, a) -> Tensor:
    """Mean of the rows of ``a`` over each node's CSR neighbourhood."""
    a = as_tensor(a)
    if a.shape[0] != len(indptr) - 1:
        raise ValueError(f"neighbor_mean: {a.shape[0]} rows for {len(indptr) - 1} nodes")
    out = kernels.neighbor_mean(indptr, indices, a.data)
    return _record("neighbor_mean", out, (a,),
                   lambda g: (kernels.neighbor_mean_transpose(indptr, indices, g),))


def straight_through(soft, hard) -> Tensor:
    """Forward value of ``hard``; the backward pass hands the gradient to ``soft``."""
    soft = as_tensor(soft)
    hard_data = hard.data if isinstance(hard, Tensor) else np.asarray(hard, dtype=np.float64)
    if hard_data.shape != soft.shape:
        raise ValueError("straight_through: shape mismatch")
    return _record("straight_through", hard_data.copy(), (soft,), lambda g: (g,))
