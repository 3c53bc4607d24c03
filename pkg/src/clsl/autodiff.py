"""Small reverse-mode automatic differentiation engine over dense float64 arrays.

Graphs are recorded define-by-run on a :class:`Tape`. Operations executed while a
tape is active append one record each; ``Tape.backward`` sweeps the records in
reverse and accumulates gradients into ``Tensor.grad``. Outside a tape the same
operations just compute values, which is what inference uses.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = reduce(x * x, None, "sum")
    ...     tape.backward(y)
    >>> x.grad.tolist()
    [2.0, 4.0]
"""

from __future__ import annotations

import contextvars
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericDomainError, NumericError, ShapeError, ConfigError

# Batched graphs carry a leading batch axis on top of the per-image rank-3 bilinear
# intermediate, hence 4 rather than 3.
MAX_RANK = 4

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "active_tape", default=None
)
_ids = itertools.count(1)


class Tensor:
    """Dense real tensor with a same-shaped gradient buffer.

    ``grad`` is allocated lazily on first access; until then it reads as zeros.
    ``tape_id`` is set for tensors produced by a recorded operation and is
    ``None`` for leaves.
    """

    __slots__ = ("value", "_grad", "requires_grad", "name", "tape_id")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.value = arr
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape_id: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.value = arr
        t._grad = None
        t.requires_grad = requires_grad
        t.name = None
        t.tape_id = None
        return t

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        self._grad = np.array(g, dtype=np.float64).reshape(self.value.shape)

    def zero_grad(self) -> None:
        self._grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def detach(x: Tensor) -> Tensor:
    """Copy of ``x`` with no history: gradients never flow back through it."""
    return Tensor(x.value.copy(), requires_grad=False)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered log of the operations that built a graph.

    Use as a context manager to make it the active recorder. A tape is meant to
    live for one forward/backward pass; ``reset`` clears it for reuse.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        output.tape_id = next(_ids)
        self.records.append(_Record(inputs, output, backward, op))

    def tensors(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for t in (*rec.inputs, rec.output):
                seen.setdefault(id(t), t)
        return list(seen.values())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def reset(self) -> None:
        """Zero every gradient the tape touched and drop all records."""
        self.zero_grad()
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for rec in reversed(self.records):
            g = rec.output._grad
            if g is None:
                continue
            grads = rec.backward(g)
            for j, (inp, gi) in enumerate(zip(rec.inputs, grads)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                if gi.shape != inp.shape:
                    raise ShapeError(f"{rec.op}: gradient shape {gi.shape} for input {j} of shape {inp.shape}")
                if inp._grad is None:
                    # adopt freshly computed buffers; copy anything that may alias
                    shared = gi is g or any(gi is other for other in grads[:j])
                    if shared or gi.base is not None or not gi.flags.writeable:
                        gi = np.array(gi, dtype=np.float64, copy=True)
                    inp._grad = gi
                else:
                    inp._grad += gi


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward) -> Tensor:
    """Wrap ``out`` and record it with ``backward(g) -> grads per input`` if a tape is active."""
    if out.ndim > MAX_RANK:
        raise ShapeError(f"{op}: result rank {out.ndim} exceeds {MAX_RANK}")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    tape = _active_tape.get()
    if tape is not None and needs:
        tape.record(op, inputs, result, backward)
    return result


custom_op = _emit


# ---------------------------------------------------------------------------
# binary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    if bv.ndim == 2:
        # fold leading axes into rows so each product is one BLAS call
        k, n = bv.shape
        a2 = av.reshape(-1, k)
        out = (a2 @ bv).reshape(*av.shape[:-1], n)

        def backward(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bv.T).reshape(av.shape), a2.T @ g2

        return _emit("matmul", (a, b), out, backward)

    def backward(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _emit("matmul", (a, b), av @ bv, backward)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _emit("add", (a, b), a.value + b.value, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# unary ops


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.value, lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _emit("exp", (a,), y, lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.value
    if not np.all(np.isfinite(x)):
        raise NumericError("log: non-finite input")
    if not np.all(x > 0):
        raise NumericDomainError(f"log: non-positive input (min {float(x.min())!r})")
    return _emit("log", (a,), np.log(x), lambda g: (g / x,))


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.value
    e = float(exponent)
    if not float(e).is_integer() and np.any(x < 0):
        raise NumericDomainError(f"pow: negative base with non-integer exponent {e}")
    y = np.power(x, e)

    def backward(g):
        if e == 0.0:
            return (np.zeros_like(g),)
        if e == 1.0:
            return (g,)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = e * np.power(x, e - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _emit("pow", (a,), y, backward)


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the input was inside."""
    x = a.value
    y = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return _emit("clip", (a,), y, lambda g: (g * inside,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "log": log, "neg": neg, "exp": exp}


def unary(a: Tensor, kind: str, exponent: float | None = None) -> Tensor:
    if kind == "pow":
        if exponent is None:
            raise ConfigError("unary pow needs an exponent")
        return power(a, exponent)
    try:
        return _UNARY[kind](a)
    except KeyError:
        raise ConfigError(f"unknown unary kind {kind!r}") from None


# ---------------------------------------------------------------------------
# normalisation and reductions


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` along ``axis``, max-shifted for stability."""
    if not temperature > 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    z = (x.value - x.value.max(axis=axis, keepdims=True)) / temperature
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)) / temperature,)

    return _emit("softmax", (x,), y, backward)


def reduce(x: Tensor, axis: int | None, kind: str, keepdims: bool = False) -> Tensor:
    """Sum, mean or max along one axis (or over everything when ``axis`` is None).

    Max routes its gradient to the first maximal element in row-major order.
    """
    v = x.value
    if axis is not None and not -v.ndim <= axis < v.ndim:
        raise ShapeError(f"reduce axis {axis} invalid for shape {v.shape}")
    shape = x.shape

    def expand(g):
        if axis is None:
            return np.broadcast_to(np.reshape(g, (1,) * v.ndim), shape)
        return np.broadcast_to(g if keepdims else np.expand_dims(g, axis), shape)

    if kind == "sum":
        out = v.sum(axis=axis, keepdims=keepdims)
        return _emit("sum", (x,), np.asarray(out), lambda g: (expand(g),))
    if kind == "mean":
        n = v.size if axis is None else v.shape[axis]
        out = v.mean(axis=axis, keepdims=keepdims)
        return _emit("mean", (x,), np.asarray(out), lambda g: (expand(g) / n,))
    if kind == "max":
        if axis is None:
            flat = int(np.argmax(v))
            out = np.asarray(v.reshape(-1)[flat]).reshape((1,) * v.ndim if keepdims else ())

            def backward(g):
                d = np.zeros(v.size)
                d[flat] = np.reshape(g, -1)[0]
                return (d.reshape(shape),)

            return _emit("max", (x,), out, backward)
        idx = np.expand_dims(np.argmax(v, axis=axis), axis)
        out = np.take_along_axis(v, idx, axis)
        if not keepdims:
            out = np.squeeze(out, axis)

        def backward(g):
            d = np.zeros(shape)
            np.put_along_axis(d, idx, g if keepdims else np.expand_dims(g, axis), axis)
            return (d,)

        return _emit("max", (x,), out, backward)
    raise ConfigError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------------------
# structural ops


def concat(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    ax = axis % a.ndim
    for i, (m, n) in enumerate(zip(a.shape, b.shape)):
        if i != ax and m != n:
            raise ShapeError(f"concat: extents differ off-axis: {a.shape} vs {b.shape}")
    cut = a.shape[ax]

    def backward(g):
        ga, gb = np.split(g, [cut], axis=ax)
        return ga, gb

    return _emit("concat", (a, b), np.concatenate([a.value, b.value], axis=ax), backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for extent {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def backward(g):
        d = np.zeros(shape)
        d[index] = g
        return (d,)

    return _emit("slice", (x,), x.value[index], backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover extent {x.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        out.append(slice_axis(x, start, start + n, ax))
        start += n
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        y = x.value.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return _emit("reshape", (x,), y, lambda g: (g.reshape(old),))


def swapaxes(x: Tensor, a: int = -1, b: int = -2) -> Tensor:
    return _emit("swapaxes", (x,), np.swapaxes(x.value, a, b), lambda g: (np.swapaxes(g, a, b),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = np.broadcast_to(x.value, tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _emit("broadcast", (x,), y, lambda g: (g,))


def expand_dims(x: Tensor, axis: int) -> Tensor:
    shape = list(x.shape)
    shape.insert(axis % (x.ndim + 1), 1)
    return reshape(x, shape)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    worst_input: str | None
    worst_index: tuple[int, ...] | None
    n_entries: int

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        where = f" at {self.worst_input}{list(self.worst_index)}" if self.worst_input else ""
        return f"gradcheck {verdict}: max rel err {self.max_rel_err:.3e}{where} over {self.n_entries} entries"


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-5,
    floor: float = 1e-6,
) -> GradcheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    The relative error of each entry is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps entries whose true gradient is zero from dividing by rounding noise.
    Inputs are perturbed in place and restored.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ConfigError(f"gradcheck step h={h} outside [1e-6, 1e-4]")
    for i, t in enumerate(inputs):
        if not np.all(np.isfinite(t.value)):
            raise NumericError(f"gradcheck: non-finite values in input {t.name or i}")
        t.requires_grad = True
        t.zero_grad()

    with Tape() as tape:
        out = f(*inputs)
        if not np.all(np.isfinite(out.value)):
            raise NumericError("gradcheck: non-finite output")
        tape.backward(out)
    analytic = [t.grad.copy() for t in inputs]

    def evaluate() -> float:
        v = float(f(*inputs).value.reshape(-1)[0])
        if not math.isfinite(v):
            raise NumericError("gradcheck: non-finite output under perturbation")
        return v

    worst, worst_name, worst_idx, n = 0.0, None, None, 0
    for i, t in enumerate(inputs):
        flat = t.value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = evaluate()
            flat[j] = orig - h
            fm = evaluate()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            ana = analytic[i].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            n += 1
            if err > worst or worst_name is None:
                worst = err
                worst_name = t.name or f"input{i}"
                worst_idx = tuple(int(k) for k in np.unravel_index(j, t.shape))
    return GradcheckReport(worst, worst < tol, worst_name, worst_idx, n)
