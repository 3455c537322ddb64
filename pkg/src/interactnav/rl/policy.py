"""Recurrent policy and value networks and their input layout."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..learn import tape as T
from ..learn.layers import LSTM, Dense
from ..learn.params import ParamStore
from ..sim.drivers import P_YIELD, Trait

POS_SCALE = 20.0
VEL_SCALE = 5.0


class LayoutError(ValueError):
    pass


class Variant(str, enum.Enum):
    """Wiring between the policy and the internal-state module.

    BASE has no internal-state module. A-D combine separate/shared encoders
    with ground-truth/inferred beliefs during training; E shares the encoder
    and optimises one combined loss.
    """

    BASE = "base"
    A = "a"
    B = "b"
    C = "c"
    D = "d"
    E = "e"


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant = Variant.A
    shared_encoder: bool = False
    z_source: str = "groundtruth"
    coupling: float = 0.0

    @classmethod
    def of(cls, variant) -> "VariantConfig":
        v = Variant(variant)
        table = {
            Variant.BASE: (False, "none", 0.0),
            Variant.A: (False, "groundtruth", 0.0),
            Variant.B: (True, "groundtruth", 0.0),
            Variant.C: (False, "inferred", 0.0),
            Variant.D: (True, "inferred", 0.0),
            Variant.E: (True, "groundtruth", 0.1),
        }
        shared, z, w = table[v]
        return cls(v, shared, z, w)

    @property
    def uses_isi(self) -> bool:
        return self.variant is not Variant.BASE


@dataclass(frozen=True)
class InputLayout:
    n_vehicles: int
    n_pedestrians: int
    use_z: bool = False
    use_w: bool = False
    embed_dim: int = 0

    @property
    def n_slots(self) -> int:
        return 1 + self.n_vehicles + self.n_pedestrians

    @property
    def base_size(self) -> int:
        return 5 * self.n_slots + (2 * self.n_vehicles if self.use_z else 0) + (
            self.n_slots - 1 if self.use_w else 0)

    @property
    def size(self) -> int:
        return self.base_size + self.embed_dim

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def build_policy_input(layout: InputLayout, feats: np.ndarray, mask: np.ndarray,
                       z: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None) -> np.ndarray:
    """Flat features for a batch of observations.

    ``feats`` (B, S, 5) and ``mask`` (B, S) come from the observation; the ego
    row is absolute, the others are relative to the ego. ``z`` (B, N, 2) holds
    [p_conservative, p_yield] per vehicle slot and ``w`` (B, S) interactivity.
    """
    feats = np.asarray(feats, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    B, S, _ = feats.shape
    if S != layout.n_slots:
        raise LayoutError(f"layout expects {layout.n_slots} slots, got {S}")
    rows = np.zeros((B, S, 5))
    rows[:, :, 0:2] = feats[:, :, 0:2]
    rows[:, 1:, 0:2] -= feats[:, :1, 0:2]
    rows[:, :, 0:2] /= POS_SCALE
    rows[:, :, 2:4] = feats[:, :, 2:4] / VEL_SCALE
    rows[:, :, 4] = 1.0
    rows *= mask[..., None]
    parts = [rows.reshape(B, -1)]
    nv = layout.n_vehicles
    if layout.use_z:
        if z is None:
            raise LayoutError("layout needs internal-state features")
        parts.append((np.asarray(z, dtype=np.float64) * mask[:, 1:1 + nv, None]).reshape(B, -1))
    elif z is not None:
        raise LayoutError("layout has no internal-state slots")
    if layout.use_w:
        if w is None:
            raise LayoutError("layout needs interactivity features")
        parts.append(np.log1p(np.asarray(w, dtype=np.float64)[:, 1:]) * mask[:, 1:])
    elif w is not None:
        raise LayoutError("layout has no interactivity slots")
    return np.concatenate(parts, axis=1)


class RecurrentHead:
    """LSTM over per-step inputs followed by a linear read-out."""

    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, hidden: int = 64, out_scale: float = 0.01):
        self.store = store
        self.prefix = prefix
        self.n_in = n_in
        self.lstm = LSTM(store, f"{prefix}.lstm", n_in, hidden, rng)
        self.out = Dense(store, f"{prefix}.out", hidden, n_out, rng)
        store[self.out.wname].data *= out_scale
        store[self.out.bname].data *= 0.0
        self.hidden = hidden

    def zero_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def step(self, x, h, c):
        if x.shape[-1] != self.n_in:
            raise LayoutError(f"{self.prefix}: input width {x.shape[-1]} != {self.n_in}")
        h, c = self.lstm.step(x, h, c)
        return self.out(h), h, c

    def unroll(self, xs, h0: np.ndarray, c0: np.ndarray, resets: np.ndarray):
        """Run a (N, L, D) chunk. ``resets[:, t]`` zeroes the state before step t."""
        h, c = T.Tensor(h0), T.Tensor(c0)
        outs = []
        for t in range(xs.shape[1]):
            keep = (1.0 - np.asarray(resets[:, t], dtype=np.float64))[:, None]
            h = T.mul(h, keep)
            c = T.mul(c, keep)
            o, h, c = self.step(xs[:, t], h, c)
            outs.append(o)
        return T.stack(outs, axis=1)


class PolicyNet(RecurrentHead):
    def __init__(self, store, layout: InputLayout, rng, hidden: int = 64, prefix: str = "pi"):
        super().__init__(store, prefix, layout.size, 3, rng, hidden)
        self.layout = layout

    def distribution(self, x, h, c):
        """Action probabilities (B, 3) and the next state for one step."""
        logits, h, c = self.step(x, h, c)
        p = T.masked_softmax(logits, np.ones(logits.shape)).data
        return p, h, c


class ValueNet(RecurrentHead):
    def __init__(self, store, layout: InputLayout, rng, hidden: int = 64, prefix: str = "vf"):
        super().__init__(store, prefix, layout.size, 1, rng, hidden, out_scale=1.0)
        self.layout = layout


def policy_forward(net: PolicyNet, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    with T.no_grad():
        p, h2, c2 = net.distribution(T.Tensor(x), T.Tensor(h), T.Tensor(c))
    return p, h2.data, c2.data


def value_forward(net: ValueNet, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    with T.no_grad():
        v, h2, c2 = net.step(T.Tensor(x), T.Tensor(h), T.Tensor(c))
    return v.data[..., 0], h2.data, c2.data


class Manipulation(str, enum.Enum):
    NONE = "none"
    CONS_TO_AGGR = "cons-to-aggr"
    AGGR_TO_CONS = "aggr-to-cons"


def manipulate_beliefs(p_cons: np.ndarray, p_yield: np.ndarray, mask: np.ndarray,
                       mode, rng: np.random.Generator, flip_prob: float = 0.5):
    """Flip inferred traits of one source class with probability ``flip_prob``.

    A flipped vehicle gets a one-hot trait of the other class and a one-hot
    intention drawn from that class's yield probability.
    """
    mode = Manipulation(mode)
    p_cons = np.array(p_cons, dtype=np.float64)
    p_yield = np.array(p_yield, dtype=np.float64)
    if mode is Manipulation.NONE:
        return p_cons, p_yield
    m = np.asarray(mask) > 0
    is_cons = p_cons >= 0.5
    source = is_cons if mode is Manipulation.CONS_TO_AGGR else ~is_cons
    u = rng.random(p_cons.shape)
    v = rng.random(p_cons.shape)
    flip = m & source & (u < flip_prob)
    new_trait = Trait.AGGRESSIVE if mode is Manipulation.CONS_TO_AGGR else Trait.CONSERVATIVE
    p_cons[flip] = 1.0 if new_trait is Trait.CONSERVATIVE else 0.0
    p_yield[flip] = (v[flip] < P_YIELD[new_trait]).astype(np.float64)
    return p_cons, p_yield
