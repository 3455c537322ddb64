"""Offline training of the internal-state head on logged labelled windows."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..env import EnvConfig, IntersectionEnv
from ..learn import tape as T
from ..learn.params import ParamStore, adam_step
from ..models.heads import Predictor, isi_loss
from .agent import AUX, encoder_config


@dataclass
class LabelledWindows:
    x: np.ndarray
    tmask: np.ndarray
    mask: np.ndarray
    z: np.ndarray
    episode: np.ndarray

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "LabelledWindows":
        return LabelledWindows(self.x[idx], self.tmask[idx], self.mask[idx], self.z[idx], self.episode[idx])


def collect_labelled_windows(env_cfg: EnvConfig, seed: int, n: int,
                             prior=(0.2, 0.2, 0.6), stride: int = 1) -> LabelledWindows:
    """Log ``n`` decision-step windows with ground-truth internal states.

    The ego acts at random with probabilities ``prior``; only steps with at
    least one vehicle in view are kept.
    """
    cfg = dataclasses.replace(env_cfg, emit_labels=True, label_futures=False)
    env = IntersectionEnv(cfg)
    nv = cfg.n_vehicles
    rng = np.random.default_rng([seed, 21])
    cum = np.cumsum(prior)
    xs, tms, ms, zs, eps = [], [], [], [], []
    ep = 0
    while len(xs) < n:
        env.reset(seed, ep)
        t = 0
        while not env.done and len(xs) < n:
            if t % stride == 0 and env.obs.mask[1:1 + nv].sum() > 0:
                w = env.window()
                lab = env.labels()
                xs.append(w.x)
                tms.append(w.tmask)
                ms.append(w.mask)
                zs.append(np.stack([lab.conservative, lab.yields], axis=-1))
                eps.append(ep)
            env.step(int(min(np.searchsorted(cum, rng.random(), side="right"), 2)))
            t += 1
        ep += 1
    return LabelledWindows(np.stack(xs), np.stack(tms), np.stack(ms), np.stack(zs), np.array(eps))


def isi_accuracy(pred: Predictor, data: LabelledWindows, batch: int = 512) -> tuple[float, float]:
    """Per-vehicle trait and intention accuracy of thresholded beliefs."""
    nv = pred.enc_cfg.n_vehicles
    hits = np.zeros(2)
    total = 0.0
    for lo in range(0, len(data), batch):
        d = data.subset(slice(lo, lo + batch))
        with T.no_grad():
            b = pred.beliefs(pred.embed(d.x, d.tmask, d.mask))
        vm = d.mask[:, 1:1 + nv]
        hits[0] += (((b.p_conservative >= 0.5) == (d.z[..., 0] > 0.5)) * vm).sum()
        hits[1] += (((b.p_yield >= 0.5) == (d.z[..., 1] > 0.5)) * vm).sum()
        total += vm.sum()
    return float(hits[0] / total), float(hits[1] / total)


def train_isi(env_cfg: EnvConfig, train: LabelledWindows, val: LabelledWindows,
              message_passing: str = "gat", seed: int = 0, hidden: int = 64, lr: float = 1e-3,
              batch: int = 64, max_steps: int = 20_000, time_budget: Optional[float] = None,
              eval_every: int = 250, log: Optional[Callable[[dict], None]] = None):
    """Fit encoder + internal-state head; returns the predictor and its best held-out accuracies."""
    rng = np.random.default_rng([seed, 23])
    pred = Predictor(ParamStore(), AUX, encoder_config(env_cfg, message_passing, hidden),
                     env_cfg.t_future, rng, with_isi=True, hidden=hidden)
    nv = env_cfg.n_vehicles
    names = [n for n in pred.store.names() if not n.startswith(f"{AUX}.tp.")]
    t0 = time.time()
    best = (0.0, 0.0)
    best_vals = pred.store.values()
    history = []
    for step in range(1, max_steps + 1):
        d = train.subset(rng.integers(len(train), size=batch))
        loss = isi_loss(pred.isi_logits(pred.embed(d.x, d.tmask, d.mask)), d.z[..., 0], d.z[..., 1],
                        d.mask[:, 1:1 + nv])
        loss.backward()
        pred.store.clip_grad_norm(5.0, names)
        adam_step(pred.store, lr, names=names)
        out_of_time = time_budget is not None and time.time() - t0 > time_budget
        if step % eval_every == 0 or out_of_time or step == max_steps:
            acc = isi_accuracy(pred, val)
            row = {"step": step, "loss": float(loss.data), "trait_acc": acc[0], "intention_acc": acc[1],
                   "seconds": round(time.time() - t0, 1)}
            history.append(row)
            if log is not None:
                log(row)
            if sum(acc) > sum(best):
                best, best_vals = acc, pred.store.values()
        if out_of_time:
            break
    pred.store.load_values(best_vals)
    return pred, best, history
