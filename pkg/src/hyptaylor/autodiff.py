"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Operations record themselves on the active ``Tape`` whenever one of their
inputs requires a gradient.  ``backward`` walks the tape in exact reverse
append order, writes gradients for every leaf and clears the tape.

    >>> x = Tensor([3.0, 4.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = power(norm2(x), 2)
    ...     backward(tape, loss)
    >>> x.grad
    array([6., 8.])

No operation clips values or gradients; the only range-limited outputs are
the ones that are bounded by definition (sigmoid, softmax, maximum).
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

_ids = itertools.count(1)
_active: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("hyptaylor_tape", default=None)
_recording: contextvars.ContextVar[bool] = contextvars.ContextVar("hyptaylor_recording", default=True)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "is_leaf")
    # make ndarray (op) Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

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
        return scale(-1.0, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of differentiable operations for one session."""

    nodes: list[Node] = field(default_factory=list)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        self._token = None

    def record(self, node: Node):
        self.nodes.append(node)

    def op_names(self) -> list[str]:
        return [n.op for n in self.nodes]

    def clear(self):
        self.nodes.clear()


def current_tape() -> Tape:
    tape = _active.get()
    if tape is None:
        tape = Tape()
        _active.set(tape)
    return tape


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if _recording.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        current_tape().record(Node(op, inputs, out, grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    q = a.data / b.data
    return _result(
        "div", q, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * q / b.data, b.shape)),
    )


def scale(s: float, x) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    return _result("scale", s * x.data, (x,), lambda g: (s * g,))


def power(x, k: int) -> Tensor:
    x = as_tensor(x)
    if int(k) != k:
        raise ContractError("power expects an integer exponent")
    k = int(k)
    if k == 0:
        return _result("power", np.ones_like(x.data), (x,), lambda g: (np.zeros_like(g),))
    return _result("power", x.data**k, (x,), lambda g: (g * k * x.data ** (k - 1),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _result("sqrt", y, (x,), lambda g: (g * 0.5 / y,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("softplus", y, (x,), lambda g: (g * s,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def absolute(x) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is taken to be 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _result("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope)
    return _result("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def tanh_builtin(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def maximum(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient flows where x > floor."""
    x = as_tensor(x)
    mask = x.data > floor
    return _result("maximum", np.where(mask, x.data, floor), (x,), lambda g: (g * mask,))


def polyval(coeffs: Sequence[float], x) -> Tensor:
    """Evaluate ``sum(coeffs[k] * x**k)`` elementwise by Horner's scheme."""
    x = as_tensor(x)
    coeffs = [float(a) for a in coeffs]
    y = np.full_like(x.data, coeffs[-1])
    for a in reversed(coeffs[:-1]):
        y = y * x.data + a

    def grad_fn(g):
        if len(coeffs) == 1:
            return (np.zeros_like(g),)
        deriv = [k * coeffs[k] for k in range(1, len(coeffs))]
        d = np.full_like(x.data, deriv[-1])
        for a in reversed(deriv[:-1]):
            d = d * x.data + a
        return (g * d,)

    return _result("polyval", y, (x,), grad_fn)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    return tuple(range(ndim)) if axis is None else axis


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", y, (x,), grad_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(1.0 / count, sum(x, axis=axis, keepdims=keepdims))


def norm2(x, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the zero vector is taken to be zero."""
    x = as_tensor(x)
    y = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        yk = y if (keepdims or axis is None) else np.expand_dims(y, axis)
        gk = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        safe = np.where(yk > 0, yk, 1.0)
        return (np.where(yk > 0, gk * x.data / safe, 0.0),)

    return _result("norm2", y, (x,), grad_fn)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)
    return _result(
        "softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    )


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _result(
        "log_softmax", y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),)
    )


# ---------------------------------------------------------------- shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data) if a.ndim == 2 else g[..., None] * b.data
            gb = a.data.T @ g if a.ndim == 2 else g * a.data
            return ga, gb
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), grad_fn)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _result("transpose", x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def index(x, idx) -> Tensor:
    x = as_tensor(x)

    def grad_fn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result("index", x.data[idx], (x,), grad_fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result("concat", y, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def grad_fn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result("gather_rows", x.data[idx], (x,), grad_fn)


def segment_sum(x, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` that share a segment id."""
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, ids, x.data)
    return _result("segment_sum", out, (x,), lambda g: (g[ids],))


def segment_softmax(x, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a vector of scores within each segment."""
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, ids, x.data)
    z = np.exp(x.data - peak[ids])
    denom = np.zeros(num_segments)
    np.add.at(denom, ids, z)
    y = z / denom[ids]

    def grad_fn(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, ids, g * y)
        return (y * (g - dot[ids]),)

    return _result("segment_softmax", y, (x,), grad_fn)


# ---------------------------------------------------------------- backward


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss) through ``tape``; returns leaf gradients by node id."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.is_leaf and loss.requires_grad:
        leaves[loss.node_id] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.node_id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(inp.node_id)
            grads[inp.node_id] = gi if prev is None else prev + gi
            if inp.is_leaf:
                leaves[inp.node_id] = inp
    tape.gradients = {}
    for nid, leaf in leaves.items():
        leaf.grad = np.asarray(grads[nid], dtype=np.float64).reshape(leaf.shape)
        tape.gradients[nid] = leaf.grad
    tape.clear()
    return tape.gradients


def grad_check(f: Callable[..., Tensor], inputs: Sequence, h: float = 1e-5, skip=None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``skip`` optionally maps an input position to a boolean mask of
    coordinates to leave out (non-differentiable points such as relu kinks).
    """
    if not 1e-7 <= h <= 1e-4:
        raise ContractError("step h must lie in [1e-7, 1e-4]")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*leaves)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError("function output is not finite")
        backward(tape, out)
    worst = 0.0
    for pos, (leaf, base) in enumerate(zip(leaves, arrays)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        mask = None if skip is None else skip.get(pos)
        for k in np.ndindex(base.shape):
            if mask is not None and mask[k]:
                continue
            plus, minus = base.copy(), base.copy()
            plus[k] += h
            minus[k] -= h
            fp = _eval(f, arrays, pos, plus)
            fm = _eval(f, arrays, pos, minus)
            num = (fp - fm) / (2 * h)
            if not np.isfinite(num):
                raise NumericalError("finite difference is not finite")
            a = analytic[k]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def _eval(f, arrays, pos, replacement) -> float:
    args = [Tensor(a) for a in arrays]
    args[pos] = Tensor(replacement)
    return float(f(*args).data.reshape(()))
