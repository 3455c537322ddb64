"""Finite-difference check of the full supervised + value objective on real scenes."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..env import IntersectionEnv, reduced_config
from ..learn import tape as T
from ..learn.check import GradReport, grad_check
from ..learn.params import ParamStore
from ..models.heads import FrozenPredictor, Predictor, isi_loss, scene_batch_scores, tp_loss
from .agent import encoder_config
from .policy import InputLayout, ValueNet, build_policy_input


def scene_batch(n: int = 6, seed: int = 0, warmup: int = 12, stride: int = 7):
    """Labelled decision steps from a few scripted episodes of the reduced environment."""
    cfg = dataclasses.replace(reduced_config(), emit_labels=True, label_futures=True)
    env = IntersectionEnv(cfg)
    rows = []
    ep = 0
    while len(rows) < n:
        env.reset(seed, ep)
        t = 0
        while not env.done and len(rows) < n:
            if t >= warmup and (t - warmup) % stride == 0 and env.obs.mask[1:].sum() > 0:
                w = env.window()
                lab = env.labels()
                rows.append((env.obs.feats, env.obs.mask, w.x, w.tmask, lab))
            env.step(2 if t % 3 else 1)
            t += 1
        ep += 1
    feats = np.stack([r[0] for r in rows])
    mask = np.stack([r[1] for r in rows])
    x = np.stack([r[2] for r in rows])
    tm = np.stack([r[3] for r in rows])
    cons = np.stack([r[4].conservative for r in rows])
    yld = np.stack([r[4].yields for r in rows])
    vmask = np.stack([r[4].vehicle_mask for r in rows])
    fut = np.stack([np.swapaxes(r[4].future, 0, 1) for r in rows])
    fmask = np.stack([r[4].future_mask for r in rows])
    return cfg, feats, mask, x, tm, cons, yld, vmask, fut, fmask


def composite_gradcheck(message_passing: str = "gat", seed: int = 0, max_entries: int = 24,
                        n_scenes: int = 6, tolerance: float = 1e-4) -> GradReport:
    """Check internal-state loss + interactivity-weighted prediction loss + value MSE.

    Every parameter array of the encoder, both heads and the value network is
    probed (``max_entries`` coordinates each).
    """
    cfg, feats, mask, x, tm, cons, yld, vmask, fut, fmask = scene_batch(n_scenes, seed)
    rng = np.random.default_rng([seed, 13])
    store = ParamStore()
    enc = encoder_config(cfg, message_passing)
    pred = Predictor(store, "aux", enc, cfg.t_future, rng, with_isi=True)
    layout = InputLayout(cfg.n_vehicles, cfg.n_pedestrians, use_z=True, use_w=True)
    value = ValueNet(store, layout, rng)
    # the without-ego branch starts as a frozen copy of the prediction weights, as in training
    ref = Predictor(ParamStore(), "ref", enc, cfg.t_future, np.random.default_rng([seed, 17]))
    ref.store.copy_from(store, {"ref" + n[3:]: n for n in pred.prediction_names()})
    frozen = FrozenPredictor(ref)
    with T.no_grad():
        mu0 = pred.predict(pred.embed(x, tm, mask), x).data
    w = scene_batch_scores(mu0, frozen.predict(x, tm, mask), mask)
    z = np.stack([cons, yld], axis=-1)
    xin = build_policy_input(layout, feats, mask, z, w)
    targets = rng.normal(size=len(xin))
    nv = cfg.n_vehicles

    def loss_fn():
        emb = pred.embed(x, tm, mask)
        l_isi = isi_loss(pred.isi_logits(emb), cons, yld, vmask)
        l_tp = tp_loss(pred.predict(emb, x), fut, w, fmask)
        h, c = value.zero_state(len(xin))
        v, _, _ = value.step(T.Tensor(xin), T.Tensor(h), T.Tensor(c))
        l_v = T.tmean(T.square(T.sub(T.reshape(v, (len(xin),)), targets)))
        return T.add(T.add(l_isi, l_tp), l_v)

    assert vmask.shape[1] == nv
    return grad_check(loss_fn, store, tolerance=tolerance, max_entries=max_entries,
                      rng=np.random.default_rng([seed, 19]))
