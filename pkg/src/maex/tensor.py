"""Dense float64 tensors with a tape-based reverse-mode gradient.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active
(``with Tape() as tape:``) every operation touching a tensor that requires
gradients is appended to the tape; :func:`backward` then replays the tape
in reverse. Tapes live in a context variable, so each thread or task
records its own.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from maex import _accel
from maex.errors import (
    ConfigError,
    ContractError,
    DegenerateVectorError,
    DimensionError,
    EmptyPoolError,
    SequenceTooShortError,
)

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("maex_tape", default=None)


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "is_param", "name", "fresh_grad")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(s < 1 for s in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_param = False
        self.name = name
        self.fresh_grad = False

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    out: Tensor
    inputs: tuple
    backward: Callable


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        backward(self, loss)


def active_tape():
    return _ACTIVE_TAPE.get()


def _record(out, inputs, fn):
    tape = _ACTIVE_TAPE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape.nodes.append(Node(out, tuple(inputs), fn))
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(parameter) into every parameter's grad buffer.

    Intermediate gradients are released afterwards and the tape is emptied.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward needs a scalar loss, got {shape}")
    if not tape.nodes or tape.nodes[-1].out is not loss and not any(n.out is loss for n in tape.nodes):
        raise ContractError("loss was not produced by this tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(gi, dtype=np.float64).reshape(t.shape)
            else:
                t.grad += np.reshape(gi, t.shape)
            if t.is_param:
                t.fresh_grad = True
    for node in tape.nodes:
        node.out.grad = None
    tape.nodes.clear()


# --- elementwise -------------------------------------------------------------


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(Tensor(a.data + c), (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return _record(Tensor(a.data + b.data), (a, b), lambda g: (g, g))


def sub(a, b):
    if not isinstance(a, Tensor):
        c = float(a)
        return _record(Tensor(c - b.data), (b,), lambda g: (-g,))
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(Tensor(a.data - c), (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return _record(Tensor(a.data - b.data), (a, b), lambda g: (g, -g))


def mul(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(Tensor(a.data * c), (a,), lambda g: (g * c,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(Tensor(ad * bd), (a, b), lambda g: (g * bd, g * ad))


def square(x):
    xd = x.data
    return _record(Tensor(xd * xd), (x,), lambda g: (2.0 * xd * g,))


def relu(x):
    xd = x.data
    mask = xd > 0
    return _record(Tensor(np.where(mask, xd, 0.0)), (x,), lambda g: (g * mask,))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)
    return _record(Tensor(s), (x,), lambda g: (g * s * (1.0 - s),))


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}; expected 'relu' or 'sigmoid'")


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: identity in eval mode, rescaled mask in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ConfigError("train-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(Tensor(x.data * keep), (x,), lambda g: (g * keep,))


# --- reductions and shape ----------------------------------------------------


def total(x):
    return _record(Tensor(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x):
    n = x.data.size
    return _record(Tensor(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x, shape):
    old = x.shape
    return _record(Tensor(x.data.reshape(shape)), (x,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis=-1):
    parts = [as_tensor(p) for p in parts]
    ref = parts[0].data
    ax = axis % ref.ndim
    for p in parts[1:]:
        if p.data.ndim != ref.ndim or any(
            p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(
                "concat: incompatible shapes " + ", ".join(str(q.shape) for q in parts)
            )
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _record(Tensor(np.concatenate([p.data for p in parts], axis=ax)), parts, fn)


# --- linear maps ---------------------------------------------------------------


def affine(x, W, b):
    """``x @ W + b`` for ``x`` of shape (n, p) or (p,)."""
    xd, Wd, bd = x.data, W.data, b.data
    if Wd.ndim != 2 or xd.ndim not in (1, 2) or xd.shape[-1] != Wd.shape[0] or bd.shape != (Wd.shape[1],):
        raise DimensionError(
            f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not agree"
        )

    def fn(g):
        if xd.ndim == 1:
            return g @ Wd.T, np.outer(xd, g), g
        return g @ Wd.T, xd.T @ g, g.sum(axis=0)

    return _record(Tensor(xd @ Wd + bd), (x, W, b), fn)


def gather_rows(table, index):
    """Rows ``table[index]``; gradient is scattered back into the table."""
    idx = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    flat = idx.reshape(-1)

    def fn(g):
        g2 = g.reshape(flat.size, -1)
        return (_accel.scatter_add_rows(g2, flat, n).reshape(table.shape),)

    return _record(Tensor(table.data[idx]), (table,), fn)


def unfold(seq, starts, w):
    """Stack windows ``seq[s:s+w]`` (flattened row-major) for each start ``s``."""
    T, d = seq.shape
    starts = np.asarray(starts, dtype=np.int64)
    rows = (starts[:, None] + np.arange(w)).reshape(-1)
    if rows.size and rows.max() >= T:
        raise SequenceTooShortError(f"window of {w} overruns a sequence of length {T}")
    out = seq.data[rows].reshape(len(starts), w * d)

    def fn(g):
        return (_accel.scatter_add_rows(g.reshape(-1, d), rows, T),)

    return _record(Tensor(out), (seq,), fn)


def conv1d_window(seq, filters, bias, w):
    """Valid 1-d convolution over the rows of ``seq`` (T x d)."""
    if w < 1:
        raise ConfigError(f"window size must be >= 1, got {w}")
    if seq.data.ndim != 2:
        raise DimensionError(f"conv1d_window: sequence must be 2-d, got {seq.shape}")
    T, d = seq.shape
    if T < w:
        raise SequenceTooShortError(f"sequence of length {T} is shorter than window {w}; pad it first")
    if filters.shape[0] != w * d:
        raise DimensionError(f"conv1d_window: filters {filters.shape} need {w * d} input rows")
    return affine(unfold(seq, np.arange(T - w + 1), w), filters, bias)


# --- pooling -------------------------------------------------------------------


def segment_max(x, offsets):
    """Column-wise max over each row segment; empty segments give zero rows."""
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.size < 2:
        raise EmptyPoolError("segment_max needs at least one segment")
    n = x.shape[0]
    if offsets[0] != 0 or offsets[-1] != n or np.any(np.diff(offsets) < 0):
        raise ContractError(f"segment offsets must run 0..{n} non-decreasing")
    out, arg = _accel.segment_max(x.data, offsets)

    def fn(g):
        return (_accel.segment_max_backward(g, arg, n),)

    return _record(Tensor(out), (x,), fn)


def max_pool_rows(x):
    """Elementwise max over the rows of an (m x k) tensor."""
    if not isinstance(x, Tensor):
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 2 and arr.shape[0] == 0:
            raise EmptyPoolError("max_pool_rows over zero rows; use the empty-evidence vector")
        x = Tensor(arr)
    if x.data.ndim != 2:
        raise DimensionError(f"max_pool_rows expects a 2-d tensor, got {x.shape}")
    pooled = segment_max(x, [0, x.shape[0]])
    return reshape(pooled, (x.shape[1],))


def fill_rows(x, mask, vector):
    """Replace the rows of ``x`` selected by ``mask`` with ``vector``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return x
    out = np.where(mask[:, None], vector.data[None, :], x.data)

    def fn(g):
        return np.where(mask[:, None], 0.0, g), g[mask].sum(axis=0)

    return _record(Tensor(out), (x, vector), fn)


# --- similarity ------------------------------------------------------------------


def rowwise_cosine(U, V):
    """Cosine similarity between matching rows of two (n x k) tensors."""
    _check_same(U, V, "cosine")
    u, v = U.data, V.data
    nu = np.sqrt((u * u).sum(axis=-1))
    nv = np.sqrt((v * v).sum(axis=-1))
    if np.any(nu == 0) or np.any(nv == 0):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector is undefined")
    dot = (u * v).sum(axis=-1)
    s = dot / (nu * nv)

    def fn(g):
        gu = (v / (nu * nv)[..., None] - (s / (nu * nu))[..., None] * u) * g[..., None]
        gv = (u / (nu * nv)[..., None] - (s / (nv * nv))[..., None] * v) * g[..., None]
        return gu, gv

    return _record(Tensor(s), (U, V), fn)


def cosine_similarity(u, v):
    """g(u, v) = u.v / (|u||v|) for two vectors of equal length."""
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim != 1:
        raise DimensionError(f"cosine_similarity expects vectors, got {u.shape}")
    return rowwise_cosine(u, v)
