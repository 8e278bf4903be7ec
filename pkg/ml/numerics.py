"""
Dense float64 tensors and a reverse-mode tape.

Every primitive below computes its value with numpy and, when a ``Tape`` is
active, records itself together with a vector-Jacobian product closure.
``backward`` replays the tape from the last entry to the first and sums the
contributions each tensor receives.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ml.errors import NumericsError, ShapeError

logger = logging.getLogger(__name__)

MASK_FILL = -1e9

Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "name")

    def __init__(self, data, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.name = name

    @classmethod
    def wrap(cls, array, name=None):
        """Adopt a float64 array without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.name = name
        return tensor

    @classmethod
    def zeros(cls, *shape, name=None):
        return cls.wrap(np.zeros(shape, dtype=np.float64), name=name)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


@dataclass(frozen=True, eq=False)
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    vjp: Vjp


_ACTIVE_TAPES: list = []


class Tape:
    """Ordered record of the primitives evaluated while the tape is active."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, entry):
        self.entries.append(entry)


class Gradients:
    """Gradients of one scalar loss, looked up by tensor identity."""

    def __init__(self, grads, tensors):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, tensor):
        grad = self._grads.get(id(tensor))
        if grad is None or self._tensors.get(id(tensor)) is not tensor:
            return np.zeros_like(tensor.data)
        return grad

    def __contains__(self, tensor):
        return self._tensors.get(id(tensor)) is tensor

    def for_parameters(self, params: Mapping[str, Tensor]):
        return {name: self[tensor] for name, tensor in params.items()}


def new_rng(seed):
    """
    numpy's default PCG64 generator. Runs are reproducible per seed only
    for a fixed numpy version; numpy does not promise identical streams
    from its distribution methods across releases.
    """
    return np.random.default_rng(seed)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def record_op(op, inputs, value, vjp):
    """Wrap ``value`` as a tensor and record it on the active tape."""
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        logger.error(f"{op} produced non-finite values")
        raise NumericsError(f"{op} produced non-finite values")
    out = Tensor.wrap(value)
    if _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1].record(TapeEntry(op, tuple(inputs), out, vjp))
    return out


def backward(tape, loss):
    if loss.size != 1:
        raise NumericsError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(entry.output is loss for entry in tape.entries):
        raise NumericsError("loss tensor is not on the tape")

    grads = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for entry in reversed(tape.entries):
        upstream = grads.get(id(entry.output))
        if upstream is None or tensors.get(id(entry.output)) is not entry.output:
            continue
        for tensor, contribution in zip(entry.inputs, entry.vjp(upstream)):
            if contribution is None:
                continue
            key = id(tensor)
            if key in grads and tensors[key] is tensor:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = np.asarray(contribution, dtype=np.float64)
                tensors[key] = tensor
    return Gradients(grads, tensors)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_value(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    value = _broadcast_value("add", np.add, a, b)
    return record_op(
        "add", (a, b), value,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    value = _broadcast_value("sub", np.subtract, a, b)
    return record_op(
        "sub", (a, b), value,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    value = _broadcast_value("mul", np.multiply, a, b)
    return record_op(
        "mul", (a, b), value,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, factor):
    a = as_tensor(a)
    return record_op("scale", (a,), a.data * factor, lambda g: (g * factor,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    return record_op(
        "matmul", (a, b), a.data @ b.data,
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return record_op("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def relu(a):
    a = as_tensor(a)
    active = a.data > 0
    return record_op("relu", (a,), np.where(active, a.data, 0.0), lambda g: (g * active,))


def reduce_sum(a):
    a = as_tensor(a)
    return record_op("sum", (a,), np.sum(a.data), lambda g: (np.full(a.shape, float(g)),))


def mean(a):
    a = as_tensor(a)
    count = a.size
    return record_op(
        "mean", (a,), np.mean(a.data),
        lambda g: (np.full(a.shape, float(g) / count),),
    )


def _stable_softmax(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    x = as_tensor(x)
    y = _stable_softmax(x.data, axis)
    return record_op(
        "softmax", (x,), y,
        lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),),
    )


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    peak = x.data.max(axis=axis, keepdims=True)
    lse = peak + np.log(np.exp(x.data - peak).sum(axis=axis, keepdims=True))
    y = x.data - lse
    probs = np.exp(y)
    return record_op(
        "log_softmax", (x,), y,
        lambda g: (g - probs * g.sum(axis=axis, keepdims=True),),
    )


def logsumexp(x, axis=-1):
    x = as_tensor(x)
    peak = x.data.max(axis=axis, keepdims=True)
    total = np.log(np.exp(x.data - peak).sum(axis=axis, keepdims=True)) + peak
    weights = np.exp(x.data - total)
    return record_op(
        "logsumexp", (x,), np.squeeze(total, axis=axis),
        lambda g: (np.expand_dims(g, axis) * weights,),
    )


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def vjp(g):
        d_normed = g * gamma.data
        d_x = inv_std * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return d_x, _unbroadcast(g * normed, gamma.shape), _unbroadcast(g, beta.shape)

    return record_op("layer_norm", (x, gamma, beta), normed * gamma.data + beta.data, vjp)


def embedding(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be a vector, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for a table of {table.shape[0]} rows")

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return record_op("embedding", (table,), table.data[ids], vjp)


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood of one-hot ``targets`` over unmasked rows."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    keep = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(keep.sum())
    rows = np.arange(targets.size)
    peak = logits.data.max(axis=1, keepdims=True)
    log_probs = logits.data - peak - np.log(np.exp(logits.data - peak).sum(axis=1, keepdims=True))
    picked = log_probs[rows, targets]
    value = -picked[keep].sum() / count if count else 0.0

    def vjp(g):
        if not count:
            return (np.zeros_like(logits.data),)
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        grad *= keep[:, None] / count
        return (grad * g,)

    return record_op("cross_entropy", (logits,), value, vjp)


def dropout(x, rate, rng, training=True):
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record_op("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def _shift(array, offset):
    out = np.zeros_like(array)
    frames = array.shape[0]
    if abs(offset) >= frames:
        return out
    if offset >= 0:
        out[offset:] = array[:frames - offset]
    else:
        out[:frames + offset] = array[-offset:]
    return out


def shift_rows(x, offset):
    """out[t] = x[t - offset], zero where t - offset falls outside the sequence."""
    x = as_tensor(x)
    return record_op("shift_rows", (x,), _shift(x.data, offset), lambda g: (_shift(g, -offset),))


def slice_rows(x, start, stop):
    x = as_tensor(x)

    def vjp(g):
        grad = np.zeros_like(x.data)
        grad[start:stop] = g
        return (grad,)

    return record_op("slice_rows", (x,), x.data[start:stop].copy(), vjp)


def slice_columns(x, start, stop):
    x = as_tensor(x)

    def vjp(g):
        grad = np.zeros_like(x.data)
        grad[:, start:stop] = g
        return (grad,)

    return record_op("slice_columns", (x,), x.data[:, start:stop].copy(), vjp)


def concat_columns(tensors):
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    value = np.concatenate([t.data for t in tensors], axis=1)
    return record_op(
        "concat_columns", tensors, value,
        lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))),
    )


def attention(q, k, v, mask=None):
    """Scaled dot-product attention; ``mask[i, j]`` False hides key j from query i."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    if mask is not None:
        scores = add(scores, Tensor.wrap(np.where(mask, 0.0, MASK_FILL)))
    return matmul(softmax(scores, axis=-1), v)


def clip_gradients(grads, max_norm):
    """Rescale a name -> gradient dict so its global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def sgd_step(params, grads, learning_rate):
    """Return new parameter tensors moved against ``grads``."""
    return {
        name: Tensor.wrap(tensor.data - learning_rate * grads[name], name=name)
        for name, tensor in params.items()
    }
