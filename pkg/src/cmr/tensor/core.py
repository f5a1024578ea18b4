"""Dense float tensors with tape-based reverse-mode differentiation.

A Tensor is a thin wrapper around a contiguous row-major numpy array
(float64 by default, float32 as an opt-in storage mode). Differentiable
operations are free functions: they compute the forward value with numpy
and, when a Tape is active and some input requires gradients, append a
record holding the input tensors and a backward rule. ``backward`` replays
the records in reverse order and accumulates per-tensor gradients
additively, so tensors used several times receive the sum of all path
contributions.

Operations never mutate their inputs. The two documented exceptions to
functional purity live elsewhere: optimizer parameter updates and
batch-norm running-statistic updates.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float64
_ids = itertools.count(1)


def set_default_dtype(name: str) -> None:
    """Switch new-tensor storage between float64 (default) and float32.

    All stated numeric tolerances assume float64; float32 is an opt-in
    mode for storage-sensitive runs and keeps the same contracts.
    """
    global _default_dtype
    if name not in _DTYPES:
        raise ContractError(f"unknown dtype {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype() -> type:
    return _default_dtype


class Tensor:
    """N-dimensional float array with an immutable shape and a unique id.

    ``data`` is always a C-contiguous numpy array. ``requires_grad`` marks
    leaves the caller wants gradients for; outputs of recorded operations
    are marked automatically so interior gradients are also retained.
    """

    __slots__ = ("data", "requires_grad", "tid", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        # order="C" (not ascontiguousarray, which promotes 0-d to 1-d)
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype,
                               order="C")
        self.requires_grad = bool(requires_grad)
        self.tid = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of this tensor cut off from any recorded history."""
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not a primitive; divide by a scalar")
        return mul(self, 1.0 / float(other))


def zeros(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad, name)


def ones(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape, dtype=_default_dtype), requires_grad, name)


# --------------------------------------------------------------------------
# Tape

_local = threading.local()


def _stack() -> list:
    try:
        return _local.stack
    except AttributeError:
        _local.stack = []
        return _local.stack


class _Record:
    __slots__ = ("out", "inputs", "backward", "label")

    def __init__(self, out, inputs, backward, label):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.label = label


class Tape:
    """Ordered record of primitive operations for one forward computation.

    A tape is confined to one logical thread of execution: enter it as a
    context manager, run the forward pass, then call ``backward(tape,
    loss)``. Nested tapes form a stack; only the innermost records.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _stack().pop()
        if popped is not self:
            raise ContractError("tapes must be exited in LIFO order")
        return False

    @staticmethod
    def current() -> "Tape | None":
        s = _stack()
        return s[-1] if s else None

    def record(self, out: Tensor, inputs: Sequence[Tensor],
               backward: Callable[[np.ndarray], tuple], label: str = "") -> None:
        self._records.append(_Record(out, tuple(inputs), backward, label))

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)


def _emit(data: np.ndarray, inputs: tuple, backward, label: str) -> Tensor:
    """Wrap an op result, recording it if a tape is active and needed."""
    tape = Tape.current()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward, label)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse-replay ``tape`` from ``loss``, returning tensor id -> gradient.

    Gradients accumulate additively across fan-out, so the store holds
    d(loss)/d(tensor) for the loss itself, every recorded intermediate on a
    path to it, and every gradient-requiring leaf that feeds it.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    store: dict[int, np.ndarray] = {loss.tid: np.ones((), dtype=loss.data.dtype)}
    for rec in reversed(tape._records):
        g = store.get(rec.out.tid)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            prev = store.get(t.tid)
            store[t.tid] = gi if prev is None else prev + gi
    return {tid: Tensor(g) for tid, g in store.items()}


def grad_check(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5) -> float:
    """Compare taped gradients of ``f`` at ``theta`` with central differences.

    ``f`` must be a deterministic scalar-valued tensor program of one
    tensor argument. Every entry of ``theta`` is perturbed by +-h and the
    symmetric difference quotient is compared with the analytic gradient.

    Returns the maximum over entries of
        |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if not np.all(np.isfinite(theta.data)):
        raise ContractError("grad_check needs finite theta entries")
    had_grad = theta.requires_grad
    theta.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(theta)
        if not isinstance(loss, Tensor) or loss.shape != ():
            raise ContractError("grad_check needs a scalar-valued tensor program")
        got = backward(tape, loss).get(theta.tid)
        analytic = got.data if got is not None else np.zeros_like(theta.data)

        numeric = np.zeros_like(theta.data)
        flat = theta.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(theta).data)
            flat[i] = orig - h
            fm = float(f(theta).data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
    finally:
        theta.requires_grad = had_grad
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# --------------------------------------------------------------------------
# Elementwise and shape primitives

def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_default_dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    if g.ndim > len(shape):
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_op(a, b, fn, da, db, label):
    a, b = _coerce(a), _coerce(b)
    try:
        out = fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{label}: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        return (_unbroadcast(da(g, a.data, b.data), a.shape),
                _unbroadcast(db(g, a.data, b.data), b.shape))

    return _emit(out, (a, b), bwd, label)


def add(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x + y,
                         lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x - y,
                         lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _broadcast_op(a, b, lambda x, y: x * y,
                         lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def neg(x: Tensor) -> Tensor:
    x = _coerce(x)
    return _emit(-x.data, (x,), lambda g: (-g,), "neg")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {shape}")
    return _emit(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop)`` along one axis."""
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"slice_axis: axis {axis} out of range for shape {x.shape}")
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ContractError(f"slice_axis: bad range [{start}, {stop}) for axis of length {n}")
    sl = tuple(slice(start, stop) if i == axis else slice(None) for i in range(x.ndim))

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _emit(x.data[sl], (x,), bwd, "slice_axis")


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    def bwd(g):
        return (np.broadcast_to(g, x.shape) * np.ones((), dtype=x.data.dtype),)

    return _emit(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), bwd, "sum_all")


def mean_axes(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Mean over the given axes (removed from the result)."""
    axes = tuple(sorted(set(a % x.ndim for a in axes)))
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes)

    def bwd(g):
        ge = g
        for a in axes:
            ge = np.expand_dims(ge, a)
        return (np.broadcast_to(ge, x.shape) / count,)

    return _emit(out, (x,), bwd, "mean_axes")


def require_clip(x: Tensor, op: str) -> None:
    """Validate the [N, T, C, H, W] clip-batch layout."""
    if x.ndim != 5:
        raise DimensionError(f"{op}: expected a 5-axis [N,T,C,H,W] tensor, got shape {x.shape}")


def require_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{op}: input contains non-finite values")
