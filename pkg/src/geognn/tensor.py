"""Dense tensors with reverse-mode automatic differentiation.

A ``Tape`` records every primitive applied while it is active; calling
``Tape.backward`` on a scalar result replays the record in reverse and
accumulates gradients into every tensor that requires them. Recording
order is a topological order by construction, so each op is visited
exactly once and accumulation order is deterministic.

Every op validates that its output is finite and raises
``NumericalError`` otherwise; NaN/Inf never propagate silently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError
from .rng import Rng

_TAPE_STACK: list["Tape"] = []


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Contiguous real values of a fixed shape, optionally tracked for grads."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if type(data) is np.ndarray and dtype is None and data.dtype in (np.float64, np.float32):
            self.data = data
        else:
            self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive ops for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every recorded tensor reachable from loss."""
        if loss.size != 1:
            raise ShapeError("backward requires a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, grad_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = grad_fn(out.grad)
            for tensor, grad in zip(inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad.copy() if grad.base is not None else grad
                else:
                    tensor.grad = tensor.grad + grad


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    if tape is None:
        if not _TAPE_STACK:
            raise RuntimeError("backward called with no active tape")
        tape = _TAPE_STACK[-1]
    tape.backward(loss)


import math as _math


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # fast path: a non-finite element makes the sum non-finite; the exact
    # (slower) check then rules out pure accumulator overflow
    if not _math.isfinite(float(arr.sum())) and not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values produced by {op}")
    return arr


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable, op: str,
          check: bool = True) -> Tensor:
    # ops that only move data (gather, concat, reshape) pass check=False:
    # they cannot create non-finite values from finite inputs
    if check:
        _finite(data, op)
    out = Tensor(data)
    if _TAPE_STACK:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                _TAPE_STACK[-1]._records.append((out, inputs, grad_fn))
                break
    return out


def _coerce(value, like: Tensor | None = None) -> Tensor:
    if type(value) is Tensor:
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _pair_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # only exact-shape and scalar broadcast are supported
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(grad: np.ndarray, tensor: Tensor) -> np.ndarray:
    if grad.shape == tensor.shape:
        return grad
    return np.full(tensor.shape, grad.sum(), dtype=grad.dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape[1]} and {b.shape[0]} differ")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(a.data @ b.data, (a, b), grad_fn, "matmul")


def add(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    _pair_shapes(a, b, "add")

    def grad_fn(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _emit(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    _pair_shapes(a, b, "sub")

    def grad_fn(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _emit(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    _pair_shapes(a, b, "mul")

    def grad_fn(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _emit(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    _pair_shapes(a, b, "div")
    if np.any(b.data == 0.0):
        raise NumericalError("div: zero divisor")

    def grad_fn(g):
        return _reduce_to(g / b.data, a), _reduce_to(-g * a.data / (b.data * b.data), b)

    return _emit(a.data / b.data, (a, b), grad_fn, "div")


def relu(x: Tensor) -> Tensor:
    x = _coerce(x)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return _emit(np.maximum(x.data, 0.0), (x,), grad_fn, "relu")


def exp(x: Tensor) -> Tensor:
    x = _coerce(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def grad_fn(g):
        return (g * out_data,)

    return _emit(out_data, (x,), grad_fn, "exp")


def log(x: Tensor) -> Tensor:
    x = _coerce(x)
    if np.any(x.data <= 0.0):
        raise NumericalError("log: non-positive input")

    def grad_fn(g):
        return (g / x.data,)

    return _emit(np.log(x.data), (x,), grad_fn, "log")


def reshape(x: Tensor, shape) -> Tensor:
    x = _coerce(x)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _emit(x.data.reshape(shape), (x,), grad_fn, "reshape", check=False)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    widths = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def grad_fn(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(slicer)])
        return tuple(pieces)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit(data, tuple(tensors), grad_fn, "concat", check=False)


def _segment_sum_data(values: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments, values.shape[1]), dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    # Canonical reduction order: rows are sorted by (segment, row content)
    # before summing, so any permutation of rows inside one segment yields
    # a bit-identical sum. Sorting by the first column is usually enough;
    # the full lexicographic sort only runs when a segment holds rows that
    # tie on the first column yet differ elsewhere (fully identical rows
    # sum the same in any order and need no tie-break).
    d = values.shape[1]
    order = np.lexsort((values[:, 0], ids))
    sv = values[order]
    si = ids[order]
    if d > 1:
        tied = (si[1:] == si[:-1]) & (sv[1:, 0] == sv[:-1, 0])
        if tied.any():
            cand = np.flatnonzero(tied)
            if not (sv[cand + 1] == sv[cand]).all():
                keys = tuple(values[:, c] for c in range(d - 1, -1, -1)) + (ids,)
                order = np.lexsort(keys)
                sv = values[order]
                si = ids[order]
    starts = np.concatenate(([0], np.flatnonzero(si[1:] != si[:-1]) + 1))
    out[si[starts]] = np.add.reduceat(sv, starts, axis=0)
    return out


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Row i of the result is the sum of value rows whose id equals i."""
    values = _coerce(values)
    if values.data.ndim != 2:
        raise ShapeError("segment_sum expects a 2-D value tensor")
    ids = np.asarray(segment_ids)
    if ids.ndim != 1 or ids.shape[0] != values.data.shape[0]:
        raise ShapeError("segment_ids must be 1-D with one id per row")
    if ids.dtype.kind not in "iu":
        raise ShapeError("segment_ids must be integers")
    if ids.size and (int(ids.min()) < 0 or int(ids.max()) >= num_segments):
        raise ShapeError("segment id out of range")

    def grad_fn(g):
        return (g[ids],)

    data = _segment_sum_data(values.data, ids, num_segments)
    return _emit(data, (values,), grad_fn, "segment_sum")


def gather_rows(values: Tensor, ids) -> Tensor:
    """Select rows by index; backward scatter-adds into the source."""
    values = _coerce(values)
    if values.data.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D value tensor")
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError("row ids must be integers")
    if ids.size and (int(ids.min()) < 0 or int(ids.max()) >= values.data.shape[0]):
        raise ShapeError("row id out of range")

    def grad_fn(g):
        buf = np.zeros_like(values.data)
        np.add.at(buf, ids, g)
        return (buf,)

    return _emit(values.data[ids], (values,), grad_fn, "gather_rows", check=False)


def sum_all(x: Tensor) -> Tensor:
    x = _coerce(x)

    def grad_fn(g):
        return (np.full(x.shape, float(g), dtype=x.dtype),)

    return _emit(np.asarray(x.data.sum(), dtype=x.dtype), (x,), grad_fn, "sum_all")


def mean_rows(x: Tensor) -> Tensor:
    """Column means of a 2-D tensor; the mean-pooling readout."""
    x = _coerce(x)
    if x.data.ndim != 2:
        raise ShapeError("mean_rows expects a 2-D tensor")
    n = x.shape[0]
    if n == 0:
        raise ShapeError("mean_rows of an empty tensor")

    def grad_fn(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _emit(x.data.mean(axis=0), (x,), grad_fn, "mean_rows")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows (one fused primitive)."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("affine expects x[n,k], w[k,m], b[m]")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")

    def grad_fn(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _emit(x.data @ w.data + b.data, (x, w, b), grad_fn, "affine")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D tensor")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the feature width")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        gxhat = g * gain.data
        dvar = (gxhat * centered * (-0.5) * inv_std**3).sum(axis=1, keepdims=True)
        dmu = (-gxhat * inv_std).sum(axis=1, keepdims=True) + dvar * (-2.0 / d) * centered.sum(
            axis=1, keepdims=True
        )
        gx = gxhat * inv_std + dvar * 2.0 * centered / d + dmu / d
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit(xhat * gain.data + bias.data, (x, gain, bias), grad_fn, "layer_norm")


def dropout(x: Tensor, rate: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    x = _coerce(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ShapeError("dropout rate must lie in [0, 1)")
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.uniform_array(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def grad_fn(g):
        return (g * keep,)

    return _emit(x.data * keep, (x,), grad_fn, "dropout")


def softmax_cross_entropy(logits: Tensor, one_hot: Tensor) -> Tensor:
    """Mean over rows of -sum(target * log softmax(logits))."""
    logits, one_hot = _coerce(logits), _coerce(one_hot)
    if logits.shape != one_hot.shape or logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects matching 2-D tensors")
    _finite(logits.data, "softmax_cross_entropy")
    row_sums = one_hot.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ShapeError("softmax_cross_entropy targets must sum to 1 per row")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm

    def grad_fn(g):
        scale = float(g) / n
        glogits = (np.exp(log_probs) - one_hot.data) * scale
        gtargets = -log_probs * scale
        return glogits, gtargets

    loss = -(one_hot.data * log_probs).sum(axis=1).mean()
    return _emit(np.asarray(loss, dtype=logits.dtype), (logits, one_hot), grad_fn, "softmax_cross_entropy")


def bce_with_logits(logits: Tensor, targets: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy with logits over unmasked elements."""
    logits, targets = _coerce(logits), _coerce(targets)
    if logits.shape != targets.shape:
        raise ShapeError("bce_with_logits expects matching shapes")
    if mask is None:
        mask = np.ones(logits.shape, dtype=logits.dtype)
    else:
        mask = np.asarray(mask, dtype=logits.dtype)
        if mask.shape != logits.shape:
            raise ShapeError("mask shape must match logits")
    count = mask.sum()
    if count == 0:
        raise ShapeError("bce_with_logits: no unmasked elements")
    x, t = logits.data, targets.data
    elem = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def grad_fn(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return ((sig - t) * mask * (float(g) / count), None)

    loss = (elem * mask).sum() / count
    return _emit(np.asarray(loss, dtype=logits.dtype), (logits, targets), grad_fn, "bce_with_logits")
