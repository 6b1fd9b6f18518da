"""Dense tensors with tape-based reverse-mode differentiation.

Operations on :class:`Tensor` are recorded on the innermost active
:class:`Tape` whenever at least one input requires a gradient. Outside a
tape every primitive runs forward only, which is what frozen inference uses.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = total(mul(x, x))
    >>> tape.backward(loss)[x.node_id]
    array([2., 4., 6.])
"""
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-6

_ids = itertools.count(1)
_tapes: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when a primitive receives inputs of incompatible shape."""


class Tensor:
    """A dense array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; the named primitives below are the real surface
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class TapeEntry:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Entries are appended as primitives execute, so every input node precedes
    the output that consumes it.
    """

    entries: list = field(default_factory=list)

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def backward(self, loss: Tensor) -> dict:
        """Return ``{node_id: gradient array}`` for every node reachable from `loss`.

        Leaves that were never touched by the computation are absent; callers
        treat a missing key as a zero gradient.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
        if loss.node_id is None:
            return {}
        grads = {loss.node_id: np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.pop(entry.output.node_id, None)
            if g is None:
                continue
            for t, gi in zip(entry.inputs, entry.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(t.node_id)
                grads[t.node_id] = gi if prev is None else prev + gi
        return grads


def grad_of(grads: dict, param: Tensor) -> np.ndarray:
    """Gradient of `param` from a backward mapping; zeros when unreachable."""
    g = grads.get(param.node_id)
    return np.zeros_like(param.data) if g is None else g


def active_tape() -> Optional[Tape]:
    return _tapes[-1] if _tapes else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind, inputs, out_data, backward):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.name = None
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node_id = next(_ids)
        tape.entries.append(TapeEntry(kind, tuple(inputs), out, backward))
    else:
        out.requires_grad = False
        out.node_id = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    """Hadamard (elementwise) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("hadamard", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _record("hadamard", (a, b), ad * bd, backward)


def scale(x, c: float):
    x = as_tensor(x)
    return _record("scale", (x,), x.data * c, lambda g: (g * c,))


def log(x):
    x = as_tensor(x)
    xd = x.data
    return _record("log", (x,), np.log(xd), lambda g: (g / xd,))


def clip(x, lo: float, hi: float):
    """Clamp values; gradient is zero where the clamp is active."""
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _record("clip", (x,), np.clip(xd, lo, hi), lambda g: (g * inside,))


def prelu(x, alpha):
    """PReLU with a single learned slope shared across all elements."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.data.size != 1:
        raise ShapeError(f"prelu: slope must have one element, got shape {alpha.shape}")
    xd = x.data
    a = alpha.data.reshape(())
    neg = np.minimum(xd, 0.0)
    out = np.maximum(xd, 0.0) + a * neg

    def backward(g):
        gx = g * np.where(xd > 0, 1.0, a).astype(g.dtype)
        ga = np.sum(g * neg).reshape(alpha.shape)
        return gx, ga

    return _record("prelu", (x, alpha), out, backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Batched matrix product following ``numpy.matmul`` broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("matmul", (a, b), ad @ bd, backward)


def affine(x, weight, bias):
    """``x @ weight + bias`` over the last axis of `x`."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape} and {weight.shape} (bias {bias.shape})")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd + bias.data).reshape(*xd.shape[:-1], wd.shape[1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record("affine", (x, weight, bias), out, backward)


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence, axis: int = -1):
    tensors = [as_tensor(t) for t in tensors]
    lead = [t.shape[:-1] for t in tensors] if axis == -1 else None
    if axis != -1:
        raise ShapeError("concat: only the last axis is supported")
    if any(s != lead[0] for s in lead):
        raise ShapeError(f"concat: leading shapes differ: {[t.shape for t in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _record("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=-1), backward)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _record("reshape", (x,), out, lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _record("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None
    return _record("broadcast_to", (x,), out, lambda g: (_unbroadcast(g, old),))


def total(x, axis=None, keepdims=False):
    """Sum over `axis` (all axes when None)."""
    x = as_tensor(x)
    old = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, old).copy(),)

    return _record("sum", (x,), np.asarray(out), backward)


def gather(table, ids, padding_idx: Optional[int] = 0):
    """Embedding lookup: rows of `table` selected by integer `ids`.

    The gradient scatter-adds into the gathered rows. Row `padding_idx` never
    receives a gradient.
    """
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"gather: ids must be integers, got dtype {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather: ids out of range for table of shape {table.shape}")
    rows = table.shape

    def backward(g):
        gt = np.zeros(rows, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, rows[1]))
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    return _record("gather", (table,), table.data[ids], backward)


def add_positional(x, positions):
    """Add a learned ``(length, width)`` positional table to ``(..., length, width)``."""
    x, positions = as_tensor(x), as_tensor(positions)
    if positions.ndim != 2 or x.shape[-2:] != positions.shape:
        raise ShapeError(f"add_positional: incompatible shapes {x.shape} and {positions.shape}")
    sp = positions.shape
    return _record("add_positional", (x, positions), x.data + positions.data,
                   lambda g: (g, _unbroadcast(g, sp)))


# ---------------------------------------------------------------- normalization

def _masked_logits(kind, xd, mask):
    if mask is None:
        return xd, None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != xd.shape:
        raise ShapeError(f"{kind}: mask shape {mask.shape} does not match input shape {xd.shape}")
    if not mask.any(axis=-1).all():
        raise ShapeError(f"{kind}: a row has every position masked")
    return np.where(mask, xd, -np.inf), mask


def softmax(x, mask=None):
    """Softmax over the last axis; masked positions get weight exactly 0."""
    x = as_tensor(x)
    z, mask = _masked_logits("softmax", x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _record("softmax", (x,), p, backward)


def log_softmax(x, mask=None):
    x = as_tensor(x)
    z, mask = _masked_logits("log_softmax", x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        g = g if mask is None else np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", (x,), out, backward)


def layer_norm(x, scale_, shift, eps: float = LAYER_NORM_EPS):
    """Normalize the last axis, then apply learned scale and shift."""
    x, scale_, shift = as_tensor(x), as_tensor(scale_), as_tensor(shift)
    w = x.shape[-1]
    if scale_.shape != (w,) or shift.shape != (w,):
        raise ShapeError(f"layer_norm: input {x.shape} with scale {scale_.shape} / shift {shift.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    sd = scale_.data

    def backward(g):
        gh = g * sd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record("layer_norm", (x, scale_, shift), xhat * sd + shift.data, backward)


PRIMITIVES = {
    "matmul": matmul,
    "concat": lambda *ts, **kw: concat(ts, **kw),
    "add": add,
    "sub": sub,
    "hadamard": mul,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "affine": affine,
    "prelu": prelu,
    "sum": total,
    "gather": gather,
    "add_positional": add_positional,
    "scale": scale,
    "log": log,
    "clip": clip,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast_to": broadcast_to,
}


def apply_primitive(kind: str, inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name, e.g. ``apply_primitive("matmul", [a, b])``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **kwargs)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> dict:
    """Gradients of scalar `loss` from `tape` (defaults to the active tape)."""
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward: no tape given and none is active")
    return tape.backward(loss)
