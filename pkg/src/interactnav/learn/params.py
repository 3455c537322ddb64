"""Named parameter storage, initialisation, Adam and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from typing import Iterable, Optional

import numpy as np

from .tape import Tensor

MAGIC = b"INAVCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered collection of trainable arrays plus Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.frozen: set[str] = set()

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        t = Tensor(value, requires_grad=name not in self.frozen, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def freeze(self, prefix: str = "") -> None:
        """Stop gradients for every parameter whose name starts with ``prefix``."""
        for name, p in self.params.items():
            if name.startswith(prefix):
                self.frozen.add(name)
                p.requires_grad = False
                p.grad = None

    def grad_norm(self, names: Optional[Iterable[str]] = None) -> float:
        names = self.names() if names is None else names
        return float(np.sqrt(sum(float((self.params[n].grad ** 2).sum())
                                 for n in names if self.params[n].grad is not None)))

    def clip_grad_norm(self, max_norm: float, names: Optional[Iterable[str]] = None) -> float:
        names = self.names() if names is None else list(names)
        norm = self.grad_norm(names)
        if norm > max_norm > 0:
            scale = max_norm / norm
            for n in names:
                if self.params[n].grad is not None:
                    self.params[n].grad = self.params[n].grad * scale
        return norm

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_values(self, values: dict) -> None:
        for k, v in values.items():
            if k not in self.params:
                raise CheckpointError(f"unknown parameter {k!r}")
            if self.params[k].data.shape != np.shape(v):
                raise CheckpointError(f"shape mismatch for {k!r}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def copy_from(self, other: "ParamStore", mapping: dict[str, str]) -> None:
        """Copy values ``other[src]`` into ``self[dst]`` for each ``dst: src``."""
        for dst, src in mapping.items():
            self.params[dst].data = other.params[src].data.copy()

    def digest(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            if name.startswith(prefix):
                a = np.ascontiguousarray(self.params[name].data, dtype="<f8")
                h.update(name.encode())
                h.update(repr(a.shape).encode())
                h.update(a.tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ serialization
    def to_bytes(self, config_digest: str = "") -> bytes:
        names = list(self.params)
        header = {
            "version": FORMAT_VERSION,
            "config_digest": config_digest,
            "step": int(self.step),
            "frozen": sorted(self.frozen),
            "arrays": [[n, list(self.params[n].data.shape)] for n in names],
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        parts = [MAGIC, struct.pack("<Q", len(hb)), hb]
        for table in (self.params, self.m, self.v):
            for n in names:
                arr = table[n].data if table is self.params else table[n]
                parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["ParamStore", dict]:
        if blob[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file")
        (hl,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + hl])
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        store = cls()
        store.frozen = set(header["frozen"])
        off = 16 + hl
        shapes = [(n, tuple(s)) for n, s in header["arrays"]]
        tables = []
        for _ in range(3):
            t = {}
            for n, s in shapes:
                size = int(np.prod(s)) * 8
                t[n] = np.frombuffer(blob[off:off + size], dtype="<f8").reshape(s).astype(np.float64)
                off += size
            tables.append(t)
        if off != len(blob):
            raise CheckpointError("trailing bytes in checkpoint")
        for n, _s in shapes:
            store.add(n, tables[0][n])
            store.m[n] = tables[1][n]
            store.v[n] = tables[2][n]
        store.step = header["step"]
        return store, header

    def save(self, path, config_digest: str = "") -> None:
        atomic_write_bytes(path, self.to_bytes(config_digest))

    @classmethod
    def load(cls, path) -> tuple["ParamStore", dict]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names: Optional[Iterable[str]] = None) -> None:
    """Bias-corrected Adam update on every parameter with a gradient, then zero grads."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    names = store.names() if names is None else names
    for n in names:
        p = store.params[n]
        g = p.grad
        if g is None or n in store.frozen:
            p.grad = None
            continue
        m = store.m[n]
        v = store.v[n]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
