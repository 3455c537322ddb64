"""Cached training runs: one directory per (variant, seed) with checkpoints and metrics."""

from __future__ import annotations

import json
import os
from typing import Callable, Optional

from ..learn.params import atomic_write_text
from .agent import Agent, TrainConfig, load_noego_predictor
from .pretrain import pretrain_noego
from .trainer import Trainer

DONE = "done.json"


def run_name(cfg: TrainConfig) -> str:
    tag = cfg.variant + ("+tp" if cfg.tp else "")
    return f"{tag}-{cfg.message_passing}-s{cfg.seed}"


def is_complete(out_dir: str, cfg: TrainConfig) -> bool:
    path = os.path.join(out_dir, DONE)
    if not os.path.exists(path):
        return False
    with open(path) as fh:
        return json.load(fh).get("config_digest") == cfg.digest()


def pretrained_path(root: str, cfg: TrainConfig, log: Optional[Callable] = None, **kw) -> str:
    """Path to the without-ego predictor for ``cfg``, training it if absent."""
    path = os.path.join(root, f"noego-{cfg.message_passing}-s{cfg.seed}.ckpt")
    if not os.path.exists(path):
        res = pretrain_noego(cfg.env_config, cfg.message_passing, cfg.seed, hidden=cfg.hidden,
                             log=log, **kw)
        os.makedirs(root, exist_ok=True)
        res.predictor.store.save(path, res.predictor.enc_cfg.digest())
    return path


def train_run(cfg: TrainConfig, out_dir: str, log: Optional[Callable] = None) -> Agent:
    """Train ``cfg`` into ``out_dir`` unless a finished run with the same config is there."""
    if is_complete(out_dir, cfg):
        return Agent.load(out_dir)
    noego = None
    if cfg.tp:
        noego = load_noego_predictor(cfg.pretrained, cfg.env_config, cfg.message_passing, cfg.hidden)
    trainer = Trainer(cfg, noego=noego)
    trainer.train(out_dir, log)
    trainer.save(out_dir)
    atomic_write_text(os.path.join(out_dir, DONE),
                      json.dumps({"config_digest": cfg.digest(), "env_steps": trainer.env_steps}) + "\n")
    return trainer.agent


def train_suite(root: str, variants, seeds, total_steps: int, base: Optional[dict] = None,
                log: Optional[Callable] = None) -> dict:
    """Train every (variant, tp) pair for every seed; returns run directories by name."""
    out = {}
    for seed in seeds:
        for variant, tp in variants:
            d = dict(base or {}, variant=variant, tp=tp, seed=seed, total_steps=total_steps)
            cfg = TrainConfig.from_dict(d)
            if tp:
                cfg.pretrained = os.path.abspath(pretrained_path(root, cfg, log))
            name = run_name(cfg)
            run_dir = os.path.join(root, name)
            train_run(cfg, run_dir, None if log is None else (lambda r, n=name: log({"run": n, **r})))
            out[name] = run_dir
    return out
