"""Small layer objects that keep their weights in a shared ParamStore."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tape as T
from .params import ParamStore


class Dense:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, zero: bool = False):
        self.store = store
        self.wname, self.bname = f"{name}.W", f"{name}.b"
        if zero:
            store.zeros(self.wname, (n_in, n_out))
        else:
            store.uniform(self.wname, (n_in, n_out), n_in, rng)
        if zero:
            store.zeros(self.bname, (n_out,))
        else:
            store.uniform(self.bname, (n_out,), n_in, rng)

    def __call__(self, x) -> T.Tensor:
        return T.dense(x, self.store[self.wname], self.store[self.bname])


class MLP:
    """Dense layers with tanh between them and a linear output."""

    def __init__(self, store: ParamStore, name: str, sizes: Sequence[int],
                 rng: np.random.Generator, zero_last: bool = False):
        n = len(sizes) - 1
        self.layers = [Dense(store, f"{name}.{k}", sizes[k], sizes[k + 1], rng,
                             zero=zero_last and k == n - 1) for k in range(n)]

    def __call__(self, x) -> T.Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = T.tanh(x)
        return x


class LSTM:
    """LSTM cell with gate order [i, f, g, o] and forget bias initialised to +1."""

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int,
                 rng: np.random.Generator):
        self.store = store
        self.hidden = hidden
        self.names = (f"{name}.Wx", f"{name}.Wh", f"{name}.b")
        store.uniform(self.names[0], (n_in, 4 * hidden), hidden, rng)
        store.uniform(self.names[1], (hidden, 4 * hidden), hidden, rng)
        b = rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), size=4 * hidden)
        b[hidden:2 * hidden] = 1.0
        store.add(self.names[2], b)

    def zero_state(self, batch_shape) -> tuple[T.Tensor, T.Tensor]:
        z = np.zeros(tuple(batch_shape) + (self.hidden,))
        return T.Tensor(z), T.Tensor(z.copy())

    def step(self, x, h, c, mask: Optional[np.ndarray] = None) -> tuple[T.Tensor, T.Tensor]:
        """One step; where ``mask`` is 0 the previous state is carried through."""
        Wx, Wh, b = (self.store[n] for n in self.names)
        h2, c2 = T.lstm_cell(x, h, c, Wx, Wh, b)
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64)[..., None]
            h2 = T.where(m, h2, h)
            c2 = T.where(m, c2, c)
        return h2, c2

    def run(self, xs, h, c, mask: Optional[np.ndarray] = None):
        """Unroll over the leading axis of ``xs``; returns per-step outputs and final state."""
        outs = []
        for t in range(xs.shape[0]):
            h, c = self.step(xs[t], h, c, None if mask is None else mask[t])
            outs.append(h)
        return outs, (h, c)
