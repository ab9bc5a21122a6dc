"""Parameter storage, SGD/Adam updates and the on-disk checkpoint format.

Checkpoint layout (one directory)::

    manifest.txt   # header lines starting with '#', then one line per tensor:
                   #   name=<str> shape=<d1>x<d2>... offset=<bytes> nbytes=<bytes>
    params.bin     # the tensors back to back, little-endian float64, row-major

Offsets count from the start of ``params.bin``; tensors appear in manifest
order, which is the store's insertion order.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from maex.errors import CheckpointError, ConfigError, ContractError
from maex.tensor import Tensor

MANIFEST = "manifest.txt"
PAYLOAD = "params.bin"
_MAGIC = "# maex-checkpoint v1"


class ParameterStore:
    """Named parameters with gradient buffers and optimizer state."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.frozen: set[str] = set()
        self.state: dict[str, dict] = {}
        self.step_count = 0

    def add(self, name, value, frozen=False):
        if name in self._params:
            raise ContractError(f"parameter {name!r} already registered")
        t = Tensor(value, name=name)
        t.is_param = True
        t.requires_grad = not frozen
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        if frozen:
            self.frozen.add(name)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def trainable(self):
        return [(n, t) for n, t in self._params.items() if n not in self.frozen]

    def set_grad(self, name, grad):
        t = self._params[name]
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != t.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter is {t.shape}")
        t.grad[...] = g
        t.fresh_grad = True

    def zero_grad(self):
        for t in self._params.values():
            t.grad[...] = 0.0
            t.fresh_grad = False

    def snapshot(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def restore(self, snap):
        for n, arr in snap.items():
            self._params[n].data[...] = arr

    def total_size(self):
        return sum(t.data.size for t in self._params.values())


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(store, config):
    """Apply one SGD or Adam update to every trainable parameter, then zero grads."""
    trainable = store.trainable()
    if not any(t.fresh_grad for _, t in trainable):
        raise ContractError("optimizer_step called before any gradient was populated")
    store.step_count += 1
    if config.kind == "sgd":
        for _, t in trainable:
            t.data -= config.lr * t.grad
    elif config.kind == "adam":
        step = store.step_count
        b1, b2 = config.beta1, config.beta2
        corr1 = 1.0 - b1**step
        corr2 = 1.0 - b2**step
        for name, t in trainable:
            st = store.state.get(name)
            if st is None:
                st = store.state[name] = {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data)}
            m, v, g = st["m"], st["v"], t.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            t.data -= config.lr * (m / corr1) / (np.sqrt(v / corr2) + config.eps)
    else:
        raise ConfigError(f"unknown optimizer {config.kind!r}; expected 'adam' or 'sgd'")
    store.zero_grad()
    return store


# --- checkpoint files -------------------------------------------------------------


def _format_shape(shape):
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text):
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def save_checkpoint(store, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [_MAGIC, "# dtype=float64 byteorder=little order=row-major"]
    offset = 0
    with open(directory / PAYLOAD, "wb") as fh:
        for name, t in store.items():
            if any(c.isspace() for c in name) or "=" in name:
                raise CheckpointError(f"parameter name {name!r} cannot be serialised")
            raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            fh.write(raw)
            lines.append(f"name={name} shape={_format_shape(t.shape)} offset={offset} nbytes={len(raw)}")
            offset += len(raw)
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            fields = dict(tok.split("=", 1) for tok in line.split())
            entries.append(
                (fields["name"], _parse_shape(fields["shape"]), int(fields["offset"]), int(fields["nbytes"]))
            )
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}:{lineno}: malformed manifest line {line!r}") from exc
    return entries


def load_arrays(directory):
    """Read a checkpoint directory into ``{name: ndarray}`` (manifest order)."""
    directory = Path(directory)
    entries = read_manifest(directory)
    payload = (directory / PAYLOAD).read_bytes()
    out = OrderedDict()
    for name, shape, offset, nbytes in entries:
        count = int(np.prod(shape)) if shape else 1
        if nbytes != 8 * count or offset + nbytes > len(payload):
            raise CheckpointError(f"checkpoint entry {name!r} has inconsistent size or offset")
        out[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
    return out


def load_checkpoint(store, directory):
    """Copy checkpoint values into an already-shaped store."""
    arrays = load_arrays(directory)
    missing = [n for n in store.names() if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {', '.join(missing)}")
    for name, t in store.items():
        arr = arrays[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"parameter {name!r}: checkpoint shape {arr.shape}, model expects {t.shape}")
        t.data[...] = arr
    return store
