"""Spatio-temporal graph encoder.

Bottom LSTMs (one per agent type) summarise each agent's history window,
a single message-passing round mixes the final-step features over a complete
graph of live agents, and top LSTMs (again one per type) take one step on the
mixed features. The embedding of an agent is ``[v, v_tilde]``: its own temporal
summary followed by the socially informed one.

Slots follow the observation layout: 0 is the ego, then ``n_vehicles``
vehicle slots, then pedestrian slots.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..learn import tape as T
from ..learn.layers import LSTM
from ..learn.params import ParamStore

MESSAGE_PASSING = ("gat", "gcn", "sage")


@dataclass(frozen=True)
class EncoderConfig:
    n_vehicles: int = 8
    n_pedestrians: int = 4
    hidden: int = 64
    message_passing: str = "gat"
    rounds: int = 1
    pos_scale: float = 20.0
    vel_scale: float = 5.0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.message_passing not in MESSAGE_PASSING:
            raise ValueError(f"message_passing must be one of {MESSAGE_PASSING}")
        if self.rounds < 1:
            raise ValueError("need at least one message-passing round")

    @property
    def n_slots(self) -> int:
        return 1 + self.n_vehicles + self.n_pedestrians

    @property
    def groups(self) -> tuple[tuple[str, int, int], ...]:
        nv = self.n_vehicles
        return (("ego", 0, 1), ("veh", 1, 1 + nv), ("ped", 1 + nv, self.n_slots))

    @property
    def embed_dim(self) -> int:
        return 2 * self.hidden

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def adjacency(mask: np.ndarray) -> np.ndarray:
    """Complete directed graph over live slots without self edges: (B, S, S)."""
    m = np.asarray(mask, dtype=np.float64)
    A = m[..., :, None] * m[..., None, :]
    idx = np.arange(m.shape[-1])
    A[..., idx, idx] = 0.0
    return A


def gat_message_pass(v, mask, W, a_src, a_dst, slope: float = 0.2, act=T.elu):
    """Single-head graph attention.

    ``v`` is (B, S, F). Scores ``LeakyReLU(a_dst . Wv_i + a_src . Wv_j)`` are
    normalised over live neighbours ``j != i``. Nodes without neighbours fall
    back to ``act(W v_i)``. Returns the updated features and the attention
    matrix (B, S, S).
    """
    A = adjacency(mask)
    Wv = T.matmul(v, W)
    si = T.matmul(Wv, T.reshape(a_dst, (-1, 1)))
    sj = T.matmul(Wv, T.reshape(a_src, (-1, 1)))
    scores = T.leaky_relu(T.add(si, T.transpose(sj, (0, 2, 1))), slope)
    alpha = T.masked_softmax(scores, A, axis=-1)
    agg = T.matmul(alpha, Wv)
    isolated = (A.sum(axis=-1) == 0)[..., None]
    out = act(T.where(isolated, Wv, agg))
    return out, alpha


def gcn_message_pass(v, mask, W, act=T.elu):
    """Symmetric-normalised graph convolution with self loops."""
    m = np.asarray(mask, dtype=np.float64)
    At = adjacency(m) + np.eye(m.shape[-1]) * m[..., :, None]
    deg = At.sum(axis=-1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    norm = dinv[..., :, None] * At * dinv[..., None, :]
    return act(T.matmul(T.Tensor(norm), T.matmul(v, W)))


def sage_message_pass(v, mask, W, act=T.elu):
    """Mean aggregation, ``act(W [v || mean_j v_j])``, then unit L2 norm.

    Nodes with no neighbours aggregate a zero message.
    """
    A = adjacency(mask)
    deg = A.sum(axis=-1, keepdims=True)
    M = A / np.where(deg > 0, deg, 1.0)
    msg = T.matmul(T.Tensor(M), v)
    h = act(T.matmul(T.concat([v, msg], axis=-1), W))
    return T.l2_normalize(h, axis=-1)


@dataclass
class Embedding:
    v: T.Tensor
    social: T.Tensor
    full: T.Tensor
    mask: np.ndarray
    attention: Optional[np.ndarray] = None


class STGraphEncoder:
    def __init__(self, store: ParamStore, prefix: str, cfg: EncoderConfig, rng: np.random.Generator):
        self.store = store
        self.prefix = prefix
        self.cfg = cfg
        H = cfg.hidden
        self.bottom = {g: LSTM(store, f"{prefix}.{g}1", 4, H, rng) for g, *_ in cfg.groups}
        self.mp = []
        for r in range(cfg.rounds):
            p = f"{prefix}.mp{r}"
            if cfg.message_passing == "gat":
                store.uniform(f"{p}.W", (H, H), H, rng)
                store.uniform(f"{p}.a_src", (H,), H, rng)
                store.uniform(f"{p}.a_dst", (H,), H, rng)
            elif cfg.message_passing == "gcn":
                store.uniform(f"{p}.W", (H, H), H, rng)
            else:
                store.uniform(f"{p}.W", (2 * H, H), 2 * H, rng)
            self.mp.append(p)
        self.top = {g: LSTM(store, f"{prefix}.{g}2", H, H, rng) for g, *_ in cfg.groups}

    def normalise(self, x: np.ndarray) -> np.ndarray:
        c = self.cfg
        scale = np.array([c.pos_scale, c.pos_scale, c.vel_scale, c.vel_scale])
        return np.asarray(x, dtype=np.float64) / scale

    def message_pass(self, v, mask):
        attention = None
        for p in self.mp:
            kind = self.cfg.message_passing
            if kind == "gat":
                v, attention = gat_message_pass(v, mask, self.store[f"{p}.W"], self.store[f"{p}.a_src"],
                                                self.store[f"{p}.a_dst"], self.cfg.leaky_slope)
            elif kind == "gcn":
                v = gcn_message_pass(v, mask, self.store[f"{p}.W"])
            else:
                v = sage_message_pass(v, mask, self.store[f"{p}.W"])
        return v, attention

    def encode(self, x: np.ndarray, tmask: np.ndarray, mask: np.ndarray) -> Embedding:
        """Embed a batch of windows.

        ``x`` (B, W, S, 4) raw histories, ``tmask`` (B, W, S) valid steps and
        ``mask`` (B, S) live slots. Padded slots come out as zeros.
        """
        x = self.normalise(x)
        tmask = np.asarray(tmask, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        B, W, S, _ = x.shape
        if S != self.cfg.n_slots:
            raise T.ShapeError(f"encoder expects {self.cfg.n_slots} slots, got {S}")
        tm = tmask * mask[:, None, :]
        parts = []
        for g, lo, hi in self.cfg.groups:
            if hi == lo:
                continue
            lstm = self.bottom[g]
            h, c = lstm.zero_state((B, hi - lo))
            for t in range(W):
                h, c = lstm.step(T.Tensor(x[:, t, lo:hi]), h, c, tm[:, t, lo:hi])
            parts.append(h)
        v = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        v = T.mul(v, mask[..., None])
        vbar, attention = self.message_pass(v, mask)
        tops = []
        for g, lo, hi in self.cfg.groups:
            if hi == lo:
                continue
            lstm = self.top[g]
            h0, c0 = lstm.zero_state((B, hi - lo))
            h, _ = lstm.step(vbar[:, lo:hi], h0, c0)
            tops.append(h)
        social = T.concat(tops, axis=1) if len(tops) > 1 else tops[0]
        social = T.mul(social, mask[..., None])
        full = T.concat([v, social], axis=-1)
        return Embedding(v, social, full, mask, None if attention is None else attention.data)

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix + ".")]
