"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op returns a new :class:`Tensor` and, when a :class:`Tape`
is active and an input requires a gradient, appends a node holding the
backward rule.  ``Tape.backward`` replays the nodes in exact reverse order.

Ops broadcast like numpy; gradients are summed back to each input's shape.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericalError",
    "backward",
    "debug_nans",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "concat_rows",
    "mean_rows",
    "take_row",
    "split_last",
    "take",
    "slice_rows",
    "pick",
    "softmax_rows",
    "log_softmax_rows",
    "layer_norm",
    "gelu",
    "l2_normalize",
]

LN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericalError(FloatingPointError):
    """Raised when an op produces NaN/Inf while NaN checking is on."""


_CHECK_NANS = False


@contextmanager
def debug_nans(enabled: bool = True) -> Iterator[None]:
    """Raise :class:`NumericalError` on the first non-finite op output."""
    global _CHECK_NANS
    previous = _CHECK_NANS
    _CHECK_NANS = enabled
    try:
        yield
    finally:
        _CHECK_NANS = previous


class Tensor:
    """An n-d array of reals with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable ops.

    Used as a context manager; ops executed inside the ``with`` block are
    recorded onto the innermost active tape.
    """

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        # ids stay unique while the nodes keep their outputs alive
        self.produced: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str) -> None:
        self.nodes.append(_Node(out, inputs, backward_fn, op))
        self.produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every ``requires_grad`` tensor reachable from ``loss``.

        Gradients accumulate into existing ``.grad`` arrays, so call
        ``zero_grad`` on parameters between steps.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self.produced:
            if not loss.requires_grad:
                raise ValueError("loss was not produced by an op recorded on this tape")
        # gradients of intermediates are kept in a side table; only leaves
        # and tensors flagged requires_grad get .grad populated
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            if node.out.requires_grad:
                _accumulate(node.out, g)
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not _needs_grad(inp, self):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for node in self.nodes:
            for inp in node.inputs:
                key = id(inp)
                if key in grads and key not in self.produced:
                    _accumulate(inp, grads.pop(key))
        if id(loss) in grads and loss.requires_grad:
            _accumulate(loss, grads.pop(id(loss)))


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _needs_grad(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad or id(t) in tape.produced


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _CHECK_NANS and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"{op} produced a non-finite value")
    out = Tensor(out_data)
    tape = Tape.current()
    if tape is not None and any(_needs_grad(t, tape) for t in inputs):
        tape.record(out, inputs, backward_fn, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "add")
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "sub")
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "mul")
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(x: Tensor, c: float) -> Tensor:
    return _emit(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    v = x.data
    cdf = 0.5 * (1.0 + erf(v / math.sqrt(2.0)))
    out = v * cdf

    def bw(g):
        pdf = np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + v * pdf),)

    return _emit(out.astype(v.dtype, copy=False), (x,), bw, "gelu")


# ----------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    return _emit(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
        "sum",
    )


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _emit(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
        "mean",
    )


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the row axis (-2): ``[..., n, d] -> [..., d]``."""
    if x.ndim < 2:
        raise ShapeError(f"mean_rows needs at least 2 dims, got {x.shape}")
    n = x.shape[-2]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, -2) / n, x.shape).copy(),)

    return _emit(x.data.mean(axis=-2), (x,), bw, "mean_rows")


# --------------------------------------------------------------------- shapes


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _emit(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return _emit(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inverse),),
        "transpose",
    )


def concat_rows(ts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the row axis (-2), preserving order."""
    ts = list(ts)
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:-2] != ref[:-2] or t.shape[-1] != ref[-1]:
            raise ShapeError(f"concat_rows: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[-2] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=-2))

    return _emit(np.concatenate([t.data for t in ts], axis=-2), tuple(ts), bw, "concat_rows")


def take_row(x: Tensor, index: int) -> Tensor:
    """Select row ``index`` of the row axis (-2): ``[..., n, d] -> [..., d]``."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[..., index, :] = g
        return (out,)

    return _emit(x.data[..., index, :].copy(), (x,), bw, "take_row")


def take(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one entry along ``axis``, dropping that axis."""
    axis = axis % x.ndim

    def bw(g):
        out = np.zeros_like(x.data)
        idx = [slice(None)] * x.ndim
        idx[axis] = index
        out[tuple(idx)] = g
        return (out,)

    return _emit(np.take(x.data, index, axis=axis), (x,), bw, "take")


def slice_rows(x: Tensor, start: int, stop: int | None = None) -> Tensor:
    """Rows ``start:stop`` of the row axis (-2)."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[..., start:stop, :] = g
        return (out,)

    return _emit(x.data[..., start:stop, :].copy(), (x,), bw, "slice_rows")


def split_last(x: Tensor, parts: int) -> list[Tensor]:
    """Split the last axis into ``parts`` equal slices."""
    n = x.shape[-1]
    if n % parts:
        raise ShapeError(f"split_last: {n} not divisible by {parts}")
    w = n // parts
    outs = []
    for i in range(parts):
        lo, hi = i * w, (i + 1) * w

        def bw(g, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            full[..., lo:hi] = g
            return (full,)

        outs.append(_emit(x.data[..., lo:hi].copy(), (x,), bw, "split_last"))
    return outs


def pick(x: Tensor, labels: np.ndarray) -> Tensor:
    """``out[b] = x[b, labels[b]]`` for a 2-d ``x``."""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def bw(g):
        full = np.zeros_like(x.data)
        full[rows, labels] = g
        return (full,)

    return _emit(x.data[rows, labels].copy(), (x,), bw, "pick")


# --------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(out, (a, b), bw, "matmul")


# ----------------------------------------------------------- normalisations


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), bw, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (x,), bw, "log_softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(out, (x, gamma, beta), bw, "layer_norm")


def l2_normalize(x: Tensor, eps: float = 0.0) -> Tensor:
    """Unit-normalise along the last axis.

    With ``eps == 0`` a zero-norm vector raises ``ZeroDivisionError``;
    otherwise ``eps`` is added to the norm before dividing.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if eps == 0.0 and np.any(norm == 0.0):
        raise ZeroDivisionError("l2_normalize: zero-norm vector")
    denom = norm + eps
    y = x.data / denom

    def bw(g):
        # d(x/(|x|+eps)) = g/denom - x * <g, x> / (|x| * denom^2)
        safe = np.where(norm == 0.0, 1.0, norm)
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        return (g / denom - x.data * dot / (safe * denom * denom),)

    return _emit(y, (x,), bw, "l2_normalize")
