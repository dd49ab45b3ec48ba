"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 matrix of shape (rows, cols).  Operations record
onto the currently active :class:`Tape`; :func:`backward` replays the tape
in exact reverse order and accumulates gradients into every tensor flagged
with ``requires_grad``.  Outside an active tape the same operations compute
values only, which is the fast no-grad path used for evaluation.

Design notes: dense matrices and 64-bit floats throughout (graphs here are
tiny, and float64 keeps finite-difference checks tight); relu uses
subgradient 0 at exactly 0.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

# When True, every operation asserts its output is finite.  Slow; meant for
# debugging suspicious runs, not production training.
CHECK_FINITE = False

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tensor:
    """A matrix value, optionally carrying a gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ContractError(f"tensors are 2-D matrices, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None if not requires_grad else np.zeros_like(arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of operations; a context manager that activates itself.

    Inputs are always recorded before their consumers, so replaying the node
    list backwards is a valid reverse topological order.  A tape is consumed
    by :func:`backward` and must not be reused.
    """

    __slots__ = ("nodes", "_outer")

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple]] = []
        self._outer = None

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = self._outer
        self._outer = None


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every flagged tensor the loss reaches.

    Gradients add onto whatever is already in ``.grad``; callers reset between
    steps (see ``zero_grads``).  The tape is cleared afterwards.

    Leaf tensors (created with ``requires_grad=True``) own a ``.grad`` buffer
    and receive contributions directly; op outputs stage theirs in a scratch
    map until their own tape node is replayed.
    """
    if loss.data.shape != (1, 1):
        raise ContractError(f"loss must be 1x1, got shape {loss.data.shape}")
    if loss.grad is not None:
        loss.grad += 1.0
    staged: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for out, pulls in reversed(tape.nodes):
        g = staged.pop(id(out), None)
        if g is None:
            continue
        for parent, vjp in pulls:
            if not parent.requires_grad:
                continue
            contribution = vjp(g)
            if parent.grad is not None:
                parent.grad += contribution
            else:
                key = id(parent)
                prev = staged.get(key)
                staged[key] = contribution if prev is None else prev + contribution
    tape.nodes.clear()


def zero_grads(tensors) -> None:
    values = tensors.values() if hasattr(tensors, "values") else tensors
    for t in values:
        t.zero_grad()


def _record(out: Tensor, pulls: tuple) -> Tensor:
    if CHECK_FINITE and not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite value produced")
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, pulls))
    return out


def _make(data: np.ndarray, requires: bool) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = requires
    t.grad = None
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")
    out = _make(a.data @ b.data, a.requires_grad or b.requires_grad)
    return _record(
        out,
        (
            (a, lambda g, bd=b.data: g @ bd.T),
            (b, lambda g, ad=a.data: ad.T @ g),
        ),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1-row vector broadcast over a's rows."""
    if a.data.shape == b.data.shape:
        out = _make(a.data + b.data, a.requires_grad or b.requires_grad)
        return _record(out, ((a, lambda g: g), (b, lambda g: g)))
    if b.data.shape == (1, a.data.shape[1]):
        out = _make(a.data + b.data, a.requires_grad or b.requires_grad)
        return _record(
            out,
            (
                (a, lambda g: g),
                (b, lambda g: g.sum(axis=0, keepdims=True)),
            ),
        )
    raise ContractError(f"add mismatch: {a.data.shape} + {b.data.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of equal-shape matrices."""
    if a.data.shape != b.data.shape:
        raise ContractError(f"mul mismatch: {a.data.shape} * {b.data.shape}")
    out = _make(a.data * b.data, a.requires_grad or b.requires_grad)
    return _record(
        out,
        (
            (a, lambda g, bd=b.data: g * bd),
            (b, lambda g, ad=a.data: g * ad),
        ),
    )


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), a.requires_grad)
    return _record(out, ((a, lambda g, ad=a.data: g * (ad > 0.0)),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = _make(s, a.requires_grad)
    return _record(out, ((a, lambda g, sd=s: g * sd * (1.0 - sd)),))


def log(a: Tensor) -> Tensor:
    out = _make(np.log(a.data), a.requires_grad)
    return _record(out, ((a, lambda g, ad=a.data: g / ad),))


def rsqrt(a: Tensor) -> Tensor:
    """Elementwise x^(-1/2); inputs must be strictly positive."""
    y = 1.0 / np.sqrt(a.data)
    out = _make(y, a.requires_grad)
    return _record(out, ((a, lambda g, yd=y: g * (-0.5) * yd * yd * yd),))


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise ContractError(f"cannot reshape {a.data.shape} to ({rows}, {cols})")
    out = _make(a.data.reshape(rows, cols), a.requires_grad)
    return _record(out, ((a, lambda g, s=a.data.shape: g.reshape(s)),))


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax with max-subtraction stabilization."""
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - logz
    out = _make(y, a.requires_grad)

    def pull(g, yd=y):
        return g - np.exp(yd) * g.sum(axis=1, keepdims=True)

    return _record(out, ((a, pull),))


def mean_rows(a: Tensor) -> Tensor:
    """Column means: (n, m) -> (1, m)."""
    n = a.data.shape[0]
    out = _make(a.data.mean(axis=0, keepdims=True), a.requires_grad)
    return _record(
        out,
        ((a, lambda g, nn=n, shape=a.data.shape: np.broadcast_to(g / nn, shape)),),
    )


def sum_all(a: Tensor) -> Tensor:
    out = _make(np.array([[a.data.sum()]]), a.requires_grad)
    return _record(
        out,
        ((a, lambda g, shape=a.data.shape: np.broadcast_to(g[0, 0], shape)),),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _make(a.data * c, a.requires_grad)
    return _record(out, ((a, lambda g, cc=c: g * cc),))


def neg(a: Tensor) -> Tensor:
    return scalar_mul(a, -1.0)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor and be deterministic at fixed
    inputs.  Points where relu sits exactly at its kink are the caller's
    responsibility to avoid (the kink has no two-sided derivative).
    """
    x = Tensor(point, requires_grad=True)
    with Tape() as tape:
        out = f(x)
    if out.data.shape != (1, 1):
        raise ContractError(f"f must return a scalar, got shape {out.data.shape}")
    backward(tape, out)
    analytic = x.grad.copy()
    base = x.data
    worst = 0.0
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += step
        minus[idx] -= step
        fd = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * step)
        err = abs(analytic[idx] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
