"""Dense 2-D matrices with taped reverse-mode gradients.

The engine is deliberately small: every value is a double-precision 2-D
matrix, every operation appends one record to the active :class:`Tape`, and
``Tape.backward`` walks the records in exact reverse execution order. The
graph is rebuilt on every forward pass, which keeps batch-dependent lookups
(memory keys, per-row gathers) trivial and makes finite-difference
verification (:func:`grad_check`) the ground truth for every composite
built on top.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateVectorError,
    DeterminismError,
    InsufficientPairsError,
    NumericError,
    ShapeError,
)

__all__ = [
    "Tensor",
    "Tape",
    "GradCheckReport",
    "as_tensor",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "neg",
    "exp",
    "log",
    "clamp",
    "relu",
    "sum_all",
    "mean_all",
    "take_rows",
    "pick_columns",
    "log_softmax_rows",
    "l2_normalize_rows",
    "pairwise_sq_dist",
    "grad_check",
]

_ZERO_NORM_FLOOR = 1e-12


class Tensor:
    """A 2-D float64 matrix, optionally tracked for reverse-mode gradients.

    Scalars and 1-D sequences are promoted to a single row. ``grad`` stays
    ``None`` until a backward pass populates it; gradients accumulate, so
    callers reusing a leaf across steps should reset it via ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensor data must be at most 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """A constant copy sharing no state with this tensor."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    # Operator sugar; scalars on either side are fine.
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(value, requires_grad: bool = False) -> Tensor:
    """Coerce arrays/sequences to a constant Tensor; pass Tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


@dataclass
class TapeRecord:
    """One executed operation: enough to replay it and to push adjoints back."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable
    vjp: Callable
    saved: tuple


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations executed inside are appended in
    execution order. ``backward`` walks them in exact reverse order, and
    ``replay`` re-runs the forward computations in place. A tape and its
    tensors are a single-threaded unit of work; distinct tapes are
    independent.
    """

    def __init__(self):
        self._records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, rec: TapeRecord) -> None:
        self._records.append(rec)

    def replay(self) -> None:
        """Re-run every recorded forward in order, refreshing outputs in place."""
        for rec in self._records:
            out, saved = rec.forward(*(t.data for t in rec.inputs))
            rec.output.data = np.ascontiguousarray(out)
            rec.saved = saved

    def backward(self, out: Tensor) -> None:
        """Accumulate d(out)/d(leaf) into ``grad`` of every tracked tensor.

        ``out`` must be a 1x1 tensor produced under this tape. Every tensor
        with ``requires_grad`` that appears on the tape ends up with a
        populated (possibly zero) gradient.
        """
        if out.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) output, got {out.shape}")
        for rec in self._records:
            for t in (*rec.inputs, rec.output):
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
        if out.grad is None:
            out.grad = np.zeros_like(out.data)
        out.grad += 1.0
        for rec in reversed(self._records):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.vjp(g, rec.saved, *(t.data for t in rec.inputs))
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi


def _apply(name: str, forward: Callable, vjp: Callable, *inputs: Tensor) -> Tensor:
    out_data, saved = forward(*(t.data for t in inputs))
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None:
        tape._record(TapeRecord(name, tuple(inputs), out, forward, vjp, saved))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; adjoints accumulate into both operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")

    def forward(x, y):
        return x @ y, ()

    def vjp(g, _saved, x, y):
        return g @ y.T, x.T @ g

    return _apply("matmul", forward, vjp, a, b)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def forward(a):
        return a.T, ()

    def vjp(g, _saved, a):
        return (g.T,)

    return _apply("transpose", forward, vjp, x)


def _broadcast_mode(a: Tensor, b: Tensor, opname: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.rows == 1 and b.cols == a.cols:
        return "b_row"
    if a.rows == 1 and a.cols == b.cols:
        return "a_row"
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    """Elementwise sum; a single-row operand broadcasts over the other's rows."""
    a, b = as_tensor(a), as_tensor(b)
    mode = _broadcast_mode(a, b, "add")

    def forward(x, y):
        return x + y, ()

    def vjp(g, _saved, x, y):
        ga = g.sum(axis=0, keepdims=True) if mode == "a_row" else g
        gb = g.sum(axis=0, keepdims=True) if mode == "b_row" else g
        return ga, gb

    return _apply("add", forward, vjp, a, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _broadcast_mode(a, b, "sub")

    def forward(x, y):
        return x - y, ()

    def vjp(g, _saved, x, y):
        ga = g.sum(axis=0, keepdims=True) if mode == "a_row" else g
        gb = -(g.sum(axis=0, keepdims=True) if mode == "b_row" else g)
        return ga, gb

    return _apply("sub", forward, vjp, a, b)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product of same-shape matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def forward(x, y):
        return x * y, ()

    def vjp(g, _saved, x, y):
        return g * y, g * x

    return _apply("mul", forward, vjp, a, b)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)

    def forward(a):
        return c * a, ()

    def vjp(g, _saved, a):
        return (c * g,)

    return _apply("scale", forward, vjp, x)


def add_scalar(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)

    def forward(a):
        return a + c, ()

    def vjp(g, _saved, a):
        return (g,)

    return _apply("add_scalar", forward, vjp, x)


def neg(x) -> Tensor:
    return scale(x, -1.0)


def exp(x) -> Tensor:
    x = as_tensor(x)

    def forward(a):
        out = np.exp(a)
        return out, (out,)

    def vjp(g, saved, a):
        return (g * saved[0],)

    return _apply("exp", forward, vjp, x)


def log(x) -> Tensor:
    """Elementwise natural log; non-positive entries are a numeric error."""
    x = as_tensor(x)

    def forward(a):
        if (a <= 0.0).any():
            raise NumericError("log: non-positive entry")
        return np.log(a), ()

    def vjp(g, _saved, a):
        return (g / a,)

    return _apply("log", forward, vjp, x)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes only through unclipped entries."""
    x = as_tensor(x)
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ConfigError(f"clamp: lo must be < hi, got [{lo}, {hi}]")

    def forward(a):
        return np.clip(a, lo, hi), ()

    def vjp(g, _saved, a):
        return (g * ((a > lo) & (a < hi)),)

    return _apply("clamp", forward, vjp, x)


def relu(x) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    x = as_tensor(x)

    def forward(a):
        return np.maximum(a, 0.0), ()

    def vjp(g, _saved, a):
        return (g * (a > 0.0),)

    return _apply("relu", forward, vjp, x)


def sum_all(x) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    x = as_tensor(x)

    def forward(a):
        return np.array([[a.sum()]]), ()

    def vjp(g, _saved, a):
        return (np.full_like(a, g[0, 0]),)

    return _apply("sum_all", forward, vjp, x)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    return scale(sum_all(x), 1.0 / x.data.size)


def take_rows(x, indices: Sequence[int]) -> Tensor:
    """Gather rows by index (repeats allowed); adjoints scatter-add back."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise IndexError(f"take_rows: index out of range for {x.rows} rows")

    def forward(a):
        return a[idx], ()

    def vjp(g, _saved, a):
        out = np.zeros_like(a)
        np.add.at(out, idx, g)
        return (out,)

    return _apply("take_rows", forward, vjp, x)


def pick_columns(x, columns: Sequence[int]) -> Tensor:
    """Per-row gather: row i of the output is x[i, columns[i]], as an Nx1 tensor."""
    x = as_tensor(x)
    cols = np.asarray(columns, dtype=np.intp)
    if cols.shape != (x.rows,):
        raise ShapeError(f"pick_columns: need one column per row, got {cols.shape} for {x.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= x.cols):
        raise IndexError(f"pick_columns: column out of range for {x.cols} columns")
    rows = np.arange(x.rows)

    def forward(a):
        return a[rows, cols].reshape(-1, 1), ()

    def vjp(g, _saved, a):
        out = np.zeros_like(a)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return _apply("pick_columns", forward, vjp, x)


def log_softmax_rows(x) -> Tensor:
    """Row-wise log softmax via max-shifted log-sum-exp (overflow safe)."""
    x = as_tensor(x)

    def forward(a):
        if not np.isfinite(a).all():
            raise NumericError("log_softmax_rows: non-finite input")
        shifted = a - a.max(axis=1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return out, (out,)

    def vjp(g, saved, a):
        out = saved[0]
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _apply("log_softmax_rows", forward, vjp, x)


def l2_normalize_rows(x) -> Tensor:
    """Scale each row to unit Euclidean norm; near-zero rows are rejected."""
    x = as_tensor(x)

    def forward(a):
        norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
        if (norms < _ZERO_NORM_FLOOR).any():
            raise DegenerateVectorError("l2_normalize_rows: row with near-zero norm")
        out = a / norms
        return out, (out, norms)

    def vjp(g, saved, a):
        out, norms = saved
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return _apply("l2_normalize_rows", forward, vjp, x)


def pairwise_sq_dist(x) -> Tensor:
    """All-pairs squared Euclidean distances between rows.

    The result is exactly symmetric with a zero diagonal; tiny negative
    values from cancellation are clamped to 0.
    """
    x = as_tensor(x)
    if x.rows < 2:
        raise InsufficientPairsError(f"pairwise_sq_dist: need at least 2 rows, got {x.rows}")

    def forward(a):
        gram = a @ a.T
        gram = 0.5 * (gram + gram.T)
        sq = np.diag(gram)
        d = sq[:, None] + sq[None, :] - 2.0 * gram
        np.maximum(d, 0.0, out=d)
        np.fill_diagonal(d, 0.0)
        return d, ()

    def vjp(g, _saved, a):
        s = g + g.T
        return (2.0 * (s.sum(axis=1, keepdims=True) * a - s @ a),)

    return _apply("pairwise_sq_dist", forward, vjp, x)


@dataclass
class GradCheckReport:
    """Outcome of one analytic-vs-finite-difference comparison."""

    max_rel_err: float
    tolerance: float
    step: float
    entries: int
    passed: bool
    per_input: tuple[float, ...] = field(default_factory=tuple)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict} max_rel_err={self.max_rel_err:.3e} "
            f"(tolerance={self.tolerance:.1e}, step={self.step:.1e}, entries={self.entries})"
        )


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare the taped gradient of ``fn(*inputs)`` against central differences.

    ``fn`` must be deterministic and return a 1x1 tensor. Every entry of every
    input with ``requires_grad`` is perturbed by ``+-step``. The reported
    relative error uses ``|a - n| / max(|a|, |n|, 1)``; the unit floor keeps
    entries whose true gradient is far below the finite-difference noise floor
    from dominating the report.
    """
    if not 0.0 < step <= 1e-2:
        raise ConfigError(f"grad_check: step must be in (0, 1e-2], got {step}")
    if tolerance <= 0.0:
        raise ConfigError(f"grad_check: tolerance must be positive, got {tolerance}")

    def run() -> np.ndarray:
        out = fn(*inputs)
        if out.shape != (1, 1):
            raise ShapeError(f"grad_check: fn must return a 1x1 tensor, got {out.shape}")
        return out.data

    first = run().copy()
    second = run()
    if first.tobytes() != second.tobytes():
        raise DeterminismError("grad_check: fn returned different values on identical inputs")

    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
    tape.backward(out)

    max_rel = 0.0
    entries = 0
    per_input: list[float] = []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad.ravel() if t.grad is not None else np.zeros(t.data.size)
        flat = t.data.ravel()
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            f_plus = run()[0, 0]
            flat[k] = orig - step
            f_minus = run()[0, 0]
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, rel)
            entries += 1
        per_input.append(worst)
        max_rel = max(max_rel, worst)

    return GradCheckReport(
        max_rel_err=max_rel,
        tolerance=tolerance,
        step=step,
        entries=entries,
        passed=max_rel <= tolerance,
        per_input=tuple(per_input),
    )
