"""Advantage estimation and the clipped surrogate objective."""

from __future__ import annotations

import numpy as np

from ..learn import tape as T
from ..learn.check import NumericError


def compute_gae(rewards, values, dones, gamma: float = 0.99, lam: float = 0.95,
                last_value: float = 0.0, normalize: bool = False):
    """Generalised advantage estimates and rewards-to-go.

    ``dones[t]`` marks that the episode ended after step ``t``, so the
    bootstrap value ``values[t + 1]`` (or ``last_value`` at the end) is cut.
    Rewards-to-go are ``A + V`` from the unnormalised advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    n = len(r)
    adv = np.zeros(n)
    nxt_v = last_value
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        nxt_v = v[t]
    returns = adv + v
    if normalize:
        adv = normalize_advantages(adv)
    return adv, returns


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


def clip_contribution(ratio, adv, eps: float = 0.2):
    """Per-sample ``min(r A, clip(r, 1 - eps, 1 + eps) A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def ppo_loss(logits: T.Tensor, actions: np.ndarray, logp_old: np.ndarray, adv: np.ndarray,
             eps: float = 0.2, entropy_coef: float = 0.01):
    """Surrogate objective to maximise plus diagnostics.

    Returns ``(objective, info)`` where ``objective`` is clipped surrogate plus
    ``entropy_coef`` times the mean policy entropy.
    """
    logp_all = T.log_softmax(logits, axis=-1)
    idx = (np.arange(len(actions)), np.asarray(actions))
    logp = T.getitem(logp_all, idx)
    ratio = np.exp(logp.data - logp_old)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite probability ratio")
    surrogate = T.ppo_clip_objective(logp, logp_old, adv, eps)
    p = T.exp(logp_all)
    entropy = T.mul(T.tsum(T.mul(p, logp_all)), -1.0 / len(actions))
    obj = T.add(surrogate, T.mul(entropy, entropy_coef))
    info = {
        "surrogate": float(surrogate.data),
        "entropy": float(entropy.data),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean(logp_old - logp.data)),
    }
    return obj, info
