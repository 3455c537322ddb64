"""Internal-state inference, trajectory prediction and interactivity scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..learn import tape as T
from ..learn.layers import MLP
from ..learn.params import ParamStore
from .encoder import Embedding, EncoderConfig, STGraphEncoder


class ContractError(ValueError):
    pass


@dataclass
class Beliefs:
    """Per vehicle-slot probabilities; rows for empty slots are zero."""

    p_conservative: np.ndarray
    p_yield: np.ndarray
    mask: np.ndarray


class ISIHead:
    """Two independent binary heads on vehicle embeddings: trait and intention."""

    def __init__(self, store: ParamStore, prefix: str, embed_dim: int, rng: np.random.Generator,
                 hidden: int = 64):
        self.mlp = MLP(store, prefix, [embed_dim, hidden, hidden, 2], rng)

    def logits(self, emb: T.Tensor) -> T.Tensor:
        return self.mlp(emb)

    def __call__(self, emb: T.Tensor) -> T.Tensor:
        return T.sigmoid(self.logits(emb))


class TPHead:
    """Mean future positions as residual offsets from the current position."""

    def __init__(self, store: ParamStore, prefix: str, embed_dim: int, t_future: int,
                 rng: np.random.Generator, hidden: int = 64, zero_last: bool = False,
                 offset_scale: float = 10.0):
        self.t_future = t_future
        self.offset_scale = offset_scale
        self.mlp = MLP(store, prefix, [embed_dim, hidden, hidden, 2 * t_future], rng, zero_last=zero_last)

    def __call__(self, emb: T.Tensor, current_xy: np.ndarray) -> T.Tensor:
        off = T.mul(self.mlp(emb), self.offset_scale)
        shape = emb.shape[:-1] + (self.t_future, 2)
        return T.add(T.reshape(off, shape), np.asarray(current_xy)[..., None, :])


def isi_loss(logits: T.Tensor, conservative: np.ndarray, yields: np.ndarray,
             mask: np.ndarray) -> T.Tensor:
    """Mean over live vehicles of trait BCE plus intention BCE. ``logits`` is (..., 2)."""
    m = np.asarray(mask, dtype=np.float64)
    n = max(float(m.sum()), 1.0)
    target = np.stack([conservative, yields], axis=-1)
    w = np.broadcast_to(m[..., None], target.shape)
    return T.mul(T.bce_with_logits(logits, target, w), 1.0 / n)


def isi_loss_from_probs(p_cons: np.ndarray, p_yield: np.ndarray, conservative: np.ndarray,
                        yields: np.ndarray, mask: np.ndarray, eps: float = 0.0) -> float:
    """Same quantity as :func:`isi_loss` computed from probabilities."""
    def bce(p, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(y > 0.5, -np.log(np.clip(p, eps, 1.0) if eps else p), 0.0)
            b = np.where(y > 0.5, 0.0, -np.log(np.clip(1.0 - p, eps, 1.0) if eps else 1.0 - p))
        return np.nan_to_num(a + b)
    m = np.asarray(mask, dtype=np.float64)
    tot = (bce(p_cons, conservative) + bce(p_yield, yields)) * m
    return float(tot.sum() / max(m.sum(), 1.0))


def interactivity(mu_with: np.ndarray, mu_without: np.ndarray) -> np.ndarray:
    """Squared L2 distance over the whole (T_f, 2) horizon, per agent."""
    a = np.asarray(mu_with, dtype=np.float64)
    b = np.asarray(mu_without, dtype=np.float64)
    if a.shape != b.shape:
        raise T.ShapeError(f"prediction shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).sum(axis=(-2, -1))


def gaussian_kl(mu1: np.ndarray, mu2: np.ndarray, var1, var2) -> np.ndarray:
    """KL(N(mu1, diag var1) || N(mu2, diag var2)) summed over the trailing (T, 2) axes."""
    mu1, mu2 = np.asarray(mu1, float), np.asarray(mu2, float)
    v1 = np.broadcast_to(np.asarray(var1, float), mu1.shape)
    v2 = np.broadcast_to(np.asarray(var2, float), mu1.shape)
    k = 0.5 * (np.log(v2 / v1) + (v1 + (mu1 - mu2) ** 2) / v2 - 1.0)
    return k.sum(axis=(-2, -1))


def tp_loss(pred: T.Tensor, future: np.ndarray, scores: np.ndarray, mask: np.ndarray) -> T.Tensor:
    """Interactivity-weighted squared error averaged over live agents.

    ``pred`` and ``future`` are (..., T_f, 2); ``scores`` and ``mask`` (...,).
    The scores are constants: no gradient flows through them.
    """
    m = np.asarray(mask, dtype=np.float64)
    w = np.asarray(scores, dtype=np.float64) * m
    n = max(float(m.sum()), 1.0)
    err = T.square(T.sub(pred, np.asarray(future)))
    per_agent = T.tsum(err, axis=(-2, -1))
    return T.mul(T.tsum(T.mul(per_agent, w)), 1.0 / n)


class Predictor:
    """Graph encoder with a trajectory head and, optionally, an ISI head."""

    def __init__(self, store: ParamStore, prefix: str, enc_cfg: EncoderConfig, t_future: int,
                 rng: np.random.Generator, with_isi: bool = False, hidden: int = 64):
        self.store = store
        self.prefix = prefix
        self.enc_cfg = enc_cfg
        self.t_future = t_future
        self.encoder = STGraphEncoder(store, f"{prefix}.enc", enc_cfg, rng)
        self.tp = TPHead(store, f"{prefix}.tp", enc_cfg.embed_dim, t_future, rng, hidden)
        self.isi = ISIHead(store, f"{prefix}.isi", enc_cfg.embed_dim, rng, hidden) if with_isi else None

    def embed(self, x, tmask, mask) -> Embedding:
        return self.encoder.encode(x, tmask, mask)

    def predict(self, emb: Embedding, x: np.ndarray) -> T.Tensor:
        """Means (B, S, T_f, 2) from embeddings and the raw window ``x``."""
        return self.tp(emb.full, np.asarray(x)[:, -1, :, :2])

    def isi_logits(self, emb: Embedding) -> T.Tensor:
        if self.isi is None:
            raise ContractError("this predictor has no internal-state head")
        nv = self.enc_cfg.n_vehicles
        return self.isi.logits(emb.full[:, 1:1 + nv])

    def beliefs(self, emb: Embedding) -> Beliefs:
        p = T.sigmoid(self.isi_logits(emb)).data
        m = emb.mask[:, 1:1 + self.enc_cfg.n_vehicles]
        return Beliefs(p[..., 0] * m, p[..., 1] * m, m)

    def infer_internal_state(self, emb: Embedding, slots: np.ndarray) -> Beliefs:
        """Beliefs for explicit slot indices; only vehicle slots are allowed."""
        nv = self.enc_cfg.n_vehicles
        slots = np.atleast_1d(slots)
        if np.any(slots < 1) or np.any(slots > nv):
            raise ContractError("internal states exist only for vehicle slots")
        b = self.beliefs(emb)
        k = slots - 1
        return Beliefs(b.p_conservative[:, k], b.p_yield[:, k], b.mask[:, k])

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix + ".")]

    def prediction_names(self) -> list[str]:
        isi = f"{self.prefix}.isi."
        return [n for n in self.param_names() if not n.startswith(isi)]


def without_ego_view(x: np.ndarray, tmask: np.ndarray, mask: np.ndarray):
    """The same window with the ego slot removed from the graph and zeroed."""
    x = np.array(x, dtype=np.float64)
    tmask = np.array(tmask, dtype=np.float64)
    mask = np.array(mask, dtype=np.float64)
    x[..., 0, :] = 0.0
    tmask[..., 0] = 0.0
    mask[..., 0] = 0.0
    return x, tmask, mask


class FrozenPredictor:
    """Without-ego branch: a pretrained predictor whose parameters never change."""

    def __init__(self, predictor: Predictor):
        self.predictor = predictor
        predictor.store.freeze(predictor.prefix + ".")
        self._digest = predictor.store.digest(predictor.prefix + ".")

    @property
    def digest(self) -> str:
        return self.predictor.store.digest(self.predictor.prefix + ".")

    def verify(self) -> bool:
        return self.digest == self._digest

    def predict(self, x, tmask, mask) -> np.ndarray:
        x, tmask, mask = without_ego_view(x, tmask, mask)
        with T.no_grad():
            emb = self.predictor.embed(x, tmask, mask)
            return self.predictor.predict(emb, x).data


def scene_batch_scores(mu_with: np.ndarray, mu_without: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Interactivity per slot with the ego slot and empty slots set to zero."""
    w = interactivity(mu_with, mu_without) * np.asarray(mask, dtype=np.float64)
    w[..., 0] = 0.0
    return w


def ade(pred: np.ndarray, future: np.ndarray, mask: np.ndarray, step: Optional[int] = None) -> float:
    """Mean displacement error over live agents, at ``step`` or averaged over the horizon."""
    d = np.linalg.norm(np.asarray(pred) - np.asarray(future), axis=-1)
    d = d[..., step] if step is not None else d.mean(axis=-1)
    m = np.asarray(mask, dtype=np.float64)
    return float((d * m).sum() / max(m.sum(), 1.0))
