"""Supervised pretraining of the without-ego trajectory predictor."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..env import EnvConfig, SceneSamples, collect_noego_dataset
from ..learn import tape as T
from ..learn.params import adam_step
from ..models.heads import Predictor, ade, tp_loss, without_ego_view
from .agent import build_noego_predictor


@dataclass
class PretrainResult:
    predictor: Predictor
    best_ade: float
    steps: int
    history: list


def noego_env_config(env_cfg: EnvConfig) -> EnvConfig:
    """The same environment with the ego removed from the simulation."""
    sim = dataclasses.replace(env_cfg.sim, ego=False)
    return dataclasses.replace(env_cfg, sim=sim)


def _batch(data: SceneSamples, idx):
    x, tm, m = without_ego_view(data.x[idx], data.tmask[idx], data.mask[idx])
    fut = np.swapaxes(data.future[idx], 1, 2)
    return x, tm, m, fut, data.fmask[idx]


def evaluate_ade(pred: Predictor, data: SceneSamples, batch: int = 256) -> float:
    """Final-step displacement error over agents with a full history and future."""
    tot = n = 0.0
    for lo in range(0, len(data), batch):
        idx = np.arange(lo, min(lo + batch, len(data)))
        x, tm, m, fut, fm = _batch(data, idx)
        with T.no_grad():
            mu = pred.predict(pred.embed(x, tm, m), x).data
        k = fm.sum()
        if k:
            tot += ade(mu, fut, fm, step=-1) * k
            n += k
    return float(tot / n) if n else float("nan")


def pretrain_noego(env_cfg: EnvConfig, message_passing: str = "gat", seed: int = 0,
                   episodes: int = 200, data: Optional[SceneSamples] = None, max_steps: int = 3000,
                   batch: int = 64, lr: float = 1e-3, val_fraction: float = 0.1, eval_every: int = 250,
                   patience: int = 4, hidden: int = 64,
                   log: Optional[Callable[[dict], None]] = None) -> PretrainResult:
    """Fit the predictor with unweighted squared error, keeping the best held-out weights.

    Scenes, not snapshots, are split between training and validation so that
    overlapping windows of one episode never straddle the split.
    """
    if data is None:
        data = collect_noego_dataset(noego_env_config(env_cfg), [seed], episodes)
    rng = np.random.default_rng([seed, 5])
    scenes = np.unique(data.scene)
    rng.shuffle(scenes)
    n_val = max(1, int(round(val_fraction * len(scenes))))
    val_mask = np.isin(data.scene, scenes[:n_val])
    keep = data.fmask.sum(axis=1) > 0
    train = data.subset(np.flatnonzero(~val_mask & keep))
    val = data.subset(np.flatnonzero(val_mask & keep))
    if len(val) > 2000:
        val = val.subset(np.sort(rng.choice(len(val), 2000, replace=False)))
    pred = build_noego_predictor(env_cfg, message_passing, seed, hidden)
    names = pred.prediction_names()
    best = evaluate_ade(pred, val)
    best_vals = pred.store.values()
    history = [{"step": 0, "val_ade": best}]
    bad = 0
    step = 0
    while step < max_steps:
        idx = rng.integers(len(train), size=batch)
        x, tm, m, fut, fm = _batch(train, idx)
        mu = pred.predict(pred.embed(x, tm, m), x)
        loss = tp_loss(mu, fut, np.ones_like(fm), fm)
        loss.backward()
        pred.store.clip_grad_norm(5.0, names)
        adam_step(pred.store, lr, names=names)
        step += 1
        if step % eval_every == 0:
            score = evaluate_ade(pred, val)
            row = {"step": step, "loss": float(loss.data), "val_ade": score}
            history.append(row)
            if log is not None:
                log(row)
            if score < best:
                best, best_vals, bad = score, pred.store.values(), 0
            else:
                bad += 1
                if bad >= patience:
                    break
    pred.store.load_values(best_vals)
    return PretrainResult(pred, best, step, history)
