"""PPO training with auxiliary internal-state and trajectory-prediction tasks."""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..env import IntersectionEnv, Outcome
from ..learn import tape as T
from ..learn.check import NumericError
from ..learn.params import adam_step, atomic_write_text
from ..models.heads import isi_loss, scene_batch_scores, tp_loss
from .agent import Agent, TrainConfig
from .ppo import compute_gae, normalize_advantages, ppo_loss

METRIC_FIELDS = ["iteration", "env_steps", "episodes", "mean_return", "completion", "collision",
                 "timeout", "trait_acc", "intention_acc", "tp_error", "mean_interactivity",
                 "isi_loss", "tp_loss", "entropy", "rolled_back"]


class ReplayBuffer:
    """Ring buffer of labelled windows for the supervised heads."""

    def __init__(self, capacity: int, W: int, S: int, nv: int, t_future: int):
        self.capacity = capacity
        self.x = np.zeros((capacity, W, S, 4))
        self.tmask = np.zeros((capacity, W, S))
        self.mask = np.zeros((capacity, S))
        self.z = np.zeros((capacity, nv, 2))
        self.future = np.zeros((capacity, S, t_future, 2))
        self.fmask = np.zeros((capacity, S))
        self.n = 0
        self.head = 0

    def __len__(self):
        return self.n

    def add(self, x, tmask, mask, z, future, fmask) -> None:
        for k in range(len(x)):
            i = self.head
            self.x[i], self.tmask[i], self.mask[i] = x[k], tmask[k], mask[k]
            self.z[i], self.future[i], self.fmask[i] = z[k], future[k], fmask[k]
            self.head = (self.head + 1) % self.capacity
            self.n = min(self.n + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(self.n, size=batch)
        return (self.x[idx], self.tmask[idx], self.mask[idx], self.z[idx],
                self.future[idx], self.fmask[idx])


@dataclass
class Rollout:
    x: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    resets: np.ndarray
    h_pi: np.ndarray
    c_pi: np.ndarray
    h_vf: np.ndarray
    c_vf: np.ndarray
    win_x: Optional[np.ndarray]
    win_tmask: Optional[np.ndarray]
    win_mask: Optional[np.ndarray]
    z: Optional[np.ndarray]
    future: Optional[np.ndarray]
    fmask: Optional[np.ndarray]
    last_values: np.ndarray
    episodes: list = field(default_factory=list)
    mean_w: float = float("nan")


class Trainer:
    def __init__(self, cfg: TrainConfig, agent: Optional[Agent] = None, noego=None):
        self.cfg = cfg
        self.agent = agent or Agent(cfg, noego)
        self.env_cfg = self.agent.env_cfg
        e = self.env_cfg
        e.emit_labels = True
        e.label_futures = False
        self.envs = [IntersectionEnv(e) for _ in range(cfg.n_envs)]
        self.rng = np.random.default_rng([cfg.seed, 3])
        self.episode_counter = 0
        self.iteration = 0
        self.env_steps = 0
        self.metrics: list[dict] = []
        nv, S = e.n_vehicles, e.n_slots
        self.replay = None
        if self.agent.aux is not None and not self.agent.vcfg.shared_encoder:
            self.replay = ReplayBuffer(cfg.replay_capacity, e.history, S, nv, e.t_future)
        self.t_roll = cfg.steps_per_iter // cfg.n_envs
        H = cfg.hidden
        self.h_pi = np.zeros((cfg.n_envs, H))
        self.c_pi = np.zeros((cfg.n_envs, H))
        self.h_vf = np.zeros((cfg.n_envs, H))
        self.c_vf = np.zeros((cfg.n_envs, H))
        self.ep_return = np.zeros(cfg.n_envs)
        self.ep_len = np.zeros(cfg.n_envs, dtype=int)
        self.just_reset = np.ones(cfg.n_envs)
        self.ep_serial = np.zeros(cfg.n_envs, dtype=int)
        for k, env in enumerate(self.envs):
            self._reset_env(env, k)
        self._keep_windows = self.agent.aux is not None

    def _reset_env(self, env: IntersectionEnv, k: int) -> None:
        env.reset(self.cfg.seed, self.episode_counter)
        self.ep_serial[k] = self.episode_counter
        self.episode_counter += 1

    # ------------------------------------------------------------------ rollout
    def collect(self) -> Rollout:
        cfg, e = self.cfg, self.env_cfg
        E, L, Tn = cfg.n_envs, cfg.chunk, self.t_roll
        S, W, nv, Tf = e.n_slots, e.history, e.n_vehicles, e.t_future
        D = self.agent.layout.size
        H = cfg.hidden
        xs = np.zeros((E, Tn, D))
        acts = np.zeros((E, Tn), dtype=np.int64)
        logp = np.zeros((E, Tn))
        vals = np.zeros((E, Tn))
        rews = np.zeros((E, Tn))
        dones = np.zeros((E, Tn))
        resets = np.zeros((E, Tn))
        n_chunks = Tn // L
        hp = np.zeros((E, n_chunks, H))
        cp = np.zeros((E, n_chunks, H))
        hv = np.zeros((E, n_chunks, H))
        cv = np.zeros((E, n_chunks, H))
        keep = self._keep_windows
        wx = np.zeros((E, Tn, W, S, 4)) if keep else None
        wt = np.zeros((E, Tn, W, S)) if keep else None
        wm = np.zeros((E, Tn, S)) if keep else None
        zz = np.zeros((E, Tn, nv, 2)) if keep else None
        ids = np.full((E, Tn, S), -1, dtype=np.int64)
        serial = np.zeros((E, Tn), dtype=np.int64)
        positions = [[None] * (Tn + 1) for _ in range(E)]
        episodes = []
        wsum = wcount = 0.0
        for t in range(Tn):
            obs = [env.obs for env in self.envs]
            wins = [env.window() for env in self.envs]
            labs = [env.labels() for env in self.envs]
            feats = np.stack([o.feats for o in obs])
            mask = np.stack([o.mask for o in obs])
            x = np.stack([w.x for w in wins])
            tm = np.stack([w.tmask for w in wins])
            z_true = np.stack([np.stack([lb.conservative, lb.yields], axis=-1) for lb in labs])
            f = self.agent.features(feats, mask, x, tm, z_true)
            if f.w is not None:
                wsum += float(f.w[:, 1:].sum())
                wcount += float(mask[:, 1:].sum())
            if t % L == 0:
                hp[:, t // L], cp[:, t // L] = self.h_pi, self.c_pi
                hv[:, t // L], cv[:, t // L] = self.h_vf, self.c_vf
            with T.no_grad():
                p, h2, c2 = self.agent.policy.distribution(T.Tensor(f.x), T.Tensor(self.h_pi), T.Tensor(self.c_pi))
                v, hv2, cv2 = self.agent.value.step(T.Tensor(f.x), T.Tensor(self.h_vf), T.Tensor(self.c_vf))
            self.h_pi, self.c_pi = h2.data, c2.data
            self.h_vf, self.c_vf = hv2.data, cv2.data
            u = self.rng.random(E)
            a = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), 2)
            xs[:, t] = f.x
            acts[:, t] = a
            logp[:, t] = np.log(p[np.arange(E), a])
            vals[:, t] = v.data[:, 0]
            resets[:, t] = self.just_reset
            if keep:
                wx[:, t], wt[:, t], wm[:, t], zz[:, t] = x, tm, mask, z_true
            ids[:, t] = np.stack([o.ids for o in obs])
            for k, env in enumerate(self.envs):
                serial[k, t] = self.ep_serial[k]
                positions[k][t] = {ag.id: (ag.x, ag.y) for ag in env.world.agents}
                res = env.step(int(a[k]))
                rews[k, t] = res.reward
                self.ep_return[k] += res.reward
                self.ep_len[k] += 1
                self.just_reset[k] = 0.0
                if res.done:
                    dones[k, t] = 1.0
                    episodes.append((res.outcome, self.ep_return[k], self.ep_len[k]))
                    self.ep_return[k] = 0.0
                    self.ep_len[k] = 0
                    self.just_reset[k] = 1.0
                    self.h_pi[k] = self.c_pi[k] = self.h_vf[k] = self.c_vf[k] = 0.0
                    self._reset_env(env, k)
        # bootstrap values for the unfinished tails
        obs = [env.obs for env in self.envs]
        wins = [env.window() for env in self.envs]
        labs = [env.labels() for env in self.envs]
        f = self.agent.features(np.stack([o.feats for o in obs]), np.stack([o.mask for o in obs]),
                                np.stack([w.x for w in wins]), np.stack([w.tmask for w in wins]),
                                np.stack([np.stack([lb.conservative, lb.yields], axis=-1) for lb in labs]))
        with T.no_grad():
            v, _, _ = self.agent.value.step(T.Tensor(f.x), T.Tensor(self.h_vf), T.Tensor(self.c_vf))
        last_values = v.data[:, 0]
        self.env_steps += E * Tn

        future = fmask = None
        if keep and self.cfg.tp:
            future = np.zeros((E, Tn, S, Tf, 2))
            fmask = np.zeros((E, Tn, S))
            for k in range(E):
                fut, fm = self._hindsight(positions[k], ids[k], serial[k], Tf)
                future[k], fmask[k] = fut, fm
        return Rollout(xs, acts, logp, vals, rews, dones, resets, hp, cp, hv, cv, wx, wt, wm, zz,
                       future, fmask, last_values, episodes, wsum / wcount if wcount else float("nan"))

    @staticmethod
    def _hindsight(positions, ids, serial, Tf):
        """Futures for every step of one env's rollout, restricted to the same episode."""
        Tn, S = ids.shape
        fut = np.zeros((Tn, S, Tf, 2))
        fm = np.zeros((Tn, S))
        for t in range(Tn):
            if t + Tf >= Tn or serial[t + Tf] != serial[t]:
                continue
            for k in range(1, S):
                aid = int(ids[t, k])
                if aid < 0:
                    continue
                track = [positions[t + d].get(aid) for d in range(1, Tf + 1)]
                if any(p is None for p in track):
                    continue
                fut[t, k] = track
                fm[t, k] = 1.0
        return fut, fm

    # ------------------------------------------------------------------ losses
    def _aux_losses(self, emb, x, tmask, z, vmask, future, fmask):
        agent = self.agent
        loss_isi = loss_tp = None
        if agent.vcfg.uses_isi:
            loss_isi = isi_loss(agent.aux.isi_logits(emb), z[..., 0], z[..., 1], vmask)
        if self.cfg.tp:
            mu = agent.aux.predict(emb, x)
            mu_without = agent.frozen.predict(x, tmask, emb.mask)
            w = scene_batch_scores(mu.data, mu_without, emb.mask)
            loss_tp = tp_loss(mu, future, w, fmask)
        return loss_isi, loss_tp

    def _supervised_step(self, stats: dict) -> None:
        cfg, agent = self.cfg, self.agent
        if self.replay is None or len(self.replay) == 0:
            return
        nv = self.env_cfg.n_vehicles
        for _ in range(cfg.aux_steps):
            x, tm, m, z, fut, fm = self.replay.sample(self.rng, cfg.aux_batch)
            emb = agent.aux.embed(x, tm, m)
            li, lt = self._aux_losses(emb, x, tm, z, m[:, 1:1 + nv], fut, fm)
            parts = [l for l in (li, lt) if l is not None]
            total = parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])
            total.backward()
            agent.aux.store.clip_grad_norm(5.0)
            adam_step(agent.aux.store, cfg.lr_aux)
            if li is not None:
                stats["isi"].append(float(li.data))
            if lt is not None:
                stats["tp"].append(float(lt.data))

    def update(self, ro: Rollout) -> dict:
        cfg, agent, e = self.cfg, self.agent, self.env_cfg
        E, Tn, L = cfg.n_envs, self.t_roll, cfg.chunk
        nv = e.n_vehicles
        adv = np.zeros((E, Tn))
        ret = np.zeros((E, Tn))
        for k in range(E):
            adv[k], ret[k] = compute_gae(ro.rewards[k], ro.values[k], ro.dones[k], cfg.gamma, cfg.lam,
                                         ro.last_values[k])
        if cfg.normalize_advantages:
            adv = normalize_advantages(adv)

        def chunks(a):
            return a.reshape((E * (Tn // L), L) + a.shape[2:])

        X, A, LP, ADV, RET, RS = (chunks(v) for v in (ro.x, ro.actions, ro.logp, adv, ret, ro.resets))
        HP, CP = ro.h_pi.reshape(-1, cfg.hidden), ro.c_pi.reshape(-1, cfg.hidden)
        HV, CV = ro.h_vf.reshape(-1, cfg.hidden), ro.c_vf.reshape(-1, cfg.hidden)
        shared = agent.vcfg.shared_encoder
        if shared:
            WX, WT, WM, ZZ = (chunks(v) for v in (ro.win_x, ro.win_tmask, ro.win_mask, ro.z))
        if ro.win_x is not None and self.replay is not None:
            fut = ro.future if ro.future is not None else np.zeros(ro.win_mask.shape + (e.t_future, 2))
            fm = ro.fmask if ro.fmask is not None else np.zeros(ro.win_mask.shape)
            flat = lambda a: a.reshape((-1,) + a.shape[2:])
            self.replay.add(flat(ro.win_x), flat(ro.win_tmask), flat(ro.win_mask), flat(ro.z),
                            flat(fut), flat(fm))
        if shared and ro.future is not None:
            FUT, FM = chunks(ro.future), chunks(ro.fmask)
        n = X.shape[0]
        per = cfg.minibatch // L
        stats = {"entropy": [], "isi": [], "tp": []}
        base_dim = agent.layout.base_size
        for _epoch in range(cfg.epochs):
            order = self.rng.permutation(n)
            for lo in range(0, n, per):
                idx = order[lo:lo + per]
                nb = len(idx)
                if shared:
                    wx = WX[idx].reshape((-1,) + WX.shape[2:])
                    wt = WT[idx].reshape((-1,) + WT.shape[2:])
                    wm = WM[idx].reshape((-1,) + WM.shape[2:])
                    emb = agent.aux.embed(wx, wt, wm)
                    ego = T.reshape(emb.full[:, 0], (nb, L, -1))
                    xin = T.concat([T.Tensor(X[idx][..., :base_dim]), ego], axis=-1)
                else:
                    xin = T.Tensor(X[idx])
                logits = agent.policy.unroll(xin, HP[idx], CP[idx], RS[idx])
                obj, info = ppo_loss(T.reshape(logits, (nb * L, 3)), A[idx].reshape(-1),
                                     LP[idx].reshape(-1), ADV[idx].reshape(-1), cfg.clip_eps,
                                     cfg.entropy_coef)
                loss = T.mul(obj, -1.0)
                if shared and agent.vcfg.coupling > 0:
                    zb = ZZ[idx].reshape((-1,) + ZZ.shape[2:])
                    fut = FUT[idx].reshape((-1,) + FUT.shape[2:]) if ro.future is not None else None
                    fmk = FM[idx].reshape((-1,) + FM.shape[2:]) if ro.future is not None else None
                    li, lt = self._aux_losses(emb, wx, wt, zb, wm[:, 1:1 + nv], fut, fmk)
                    aux_total = li if lt is None else T.add(li, lt)
                    loss = T.add(loss, T.mul(aux_total, agent.vcfg.coupling))
                    stats["isi"].append(float(li.data))
                    if lt is not None:
                        stats["tp"].append(float(lt.data))
                loss.backward()
                if not np.isfinite(agent.pi_store.grad_norm()):
                    raise NumericError("non-finite policy gradient")
                agent.pi_store.clip_grad_norm(cfg.max_grad_norm)
                adam_step(agent.pi_store, cfg.lr_policy)
                if shared:
                    enc = agent.aux.encoder.param_names()
                    names = agent.aux.store.names() if agent.vcfg.coupling > 0 else enc
                    agent.aux.store.clip_grad_norm(cfg.max_grad_norm, names)
                    adam_step(agent.aux.store, cfg.lr_policy, names=names)
                    agent.aux.store.zero_grad()
                stats["entropy"].append(info["entropy"])
                xv = T.Tensor(X[idx])
                if shared:
                    xv = T.concat([T.Tensor(X[idx][..., :base_dim]), T.Tensor(ego.data)], axis=-1)
                v = agent.value.unroll(xv, HV[idx], CV[idx], RS[idx])
                vloss = T.tmean(T.square(T.sub(T.reshape(v, (nb, L)), RET[idx])))
                vloss.backward()
                agent.vf_store.clip_grad_norm(cfg.max_grad_norm)
                adam_step(agent.vf_store, cfg.lr_value)
            if shared and agent.vcfg.coupling == 0:
                self._shared_supervised(WX, WT, WM, ZZ, ro, stats)
        if not shared:
            self._supervised_step(stats)
        return stats

    def _shared_supervised(self, WX, WT, WM, ZZ, ro, stats) -> None:
        cfg, agent = self.cfg, self.agent
        nv = self.env_cfg.n_vehicles
        flatx = WX.reshape((-1,) + WX.shape[2:])
        flatt = WT.reshape((-1,) + WT.shape[2:])
        flatm = WM.reshape((-1,) + WM.shape[2:])
        flatz = ZZ.reshape((-1,) + ZZ.shape[2:])
        fut = ro.future.reshape((-1,) + ro.future.shape[2:]) if ro.future is not None else None
        fm = ro.fmask.reshape((-1,) + ro.fmask.shape[2:]) if ro.fmask is not None else None
        steps = max(1, cfg.aux_steps // cfg.epochs)
        for _ in range(steps):
            idx = self.rng.integers(len(flatx), size=cfg.aux_batch)
            emb = agent.aux.embed(flatx[idx], flatt[idx], flatm[idx])
            li, lt = self._aux_losses(emb, flatx[idx], flatt[idx], flatz[idx], flatm[idx][:, 1:1 + nv],
                                      None if fut is None else fut[idx], None if fm is None else fm[idx])
            total = li if lt is None else T.add(li, lt)
            total.backward()
            agent.aux.store.clip_grad_norm(5.0)
            adam_step(agent.aux.store, cfg.lr_aux)
            stats["isi"].append(float(li.data))
            if lt is not None:
                stats["tp"].append(float(lt.data))

    # ------------------------------------------------------------------ metrics
    def _aux_eval(self, ro: Rollout, n: int = 512) -> dict:
        out = {"trait_acc": float("nan"), "intention_acc": float("nan"), "tp_error": float("nan")}
        agent = self.agent
        if agent.aux is None or ro.win_x is None:
            return out
        nv = self.env_cfg.n_vehicles
        flat = lambda a: a.reshape((-1,) + a.shape[2:])
        X, TM, M, Z = flat(ro.win_x), flat(ro.win_tmask), flat(ro.win_mask), flat(ro.z)
        idx = self.rng.choice(len(X), size=min(n, len(X)), replace=False)
        with T.no_grad():
            emb = agent.aux.embed(X[idx], TM[idx], M[idx])
            if agent.vcfg.uses_isi:
                b = agent.aux.beliefs(emb)
                vm = M[idx][:, 1:1 + nv]
                tot = max(vm.sum(), 1.0)
                out["trait_acc"] = float((((b.p_conservative >= 0.5) == (Z[idx][..., 0] > 0.5)) * vm).sum() / tot)
                out["intention_acc"] = float((((b.p_yield >= 0.5) == (Z[idx][..., 1] > 0.5)) * vm).sum() / tot)
            if self.cfg.tp and ro.future is not None:
                mu = agent.aux.predict(emb, X[idx]).data
                fut, fm = flat(ro.future)[idx], flat(ro.fmask)[idx]
                d = np.linalg.norm(mu[..., -1, :] - fut[..., -1, :], axis=-1)
                out["tp_error"] = float((d * fm).sum() / max(fm.sum(), 1.0))
        return out

    def _snapshot(self) -> dict:
        a = self.agent
        stores = [a.pi_store, a.vf_store] + ([a.aux.store] if a.aux is not None else [])
        return {id(s): (s, s.values(), {k: v.copy() for k, v in s.m.items()},
                        {k: v.copy() for k, v in s.v.items()}, s.step) for s in stores}

    @staticmethod
    def _restore(snap: dict) -> None:
        for store, values, m, v, step in snap.values():
            store.load_values(values)
            store.m, store.v, store.step = m, v, step
            store.zero_grad()

    def train_iteration(self) -> dict:
        """One collect/update cycle. A numeric failure restores the pre-update parameters."""
        t0 = time.time()
        ro = self.collect()
        snap = self._snapshot()
        try:
            stats = self.update(ro)
            rolled_back = 0
        except NumericError:
            self._restore(snap)
            stats = {"entropy": [], "isi": [], "tp": []}
            rolled_back = 1
        self.iteration += 1
        eps = ro.episodes
        n = len(eps)
        count = lambda o: sum(1 for e in eps if e[0] is o) / n if n else float("nan")
        row = {
            "iteration": self.iteration, "env_steps": self.env_steps, "episodes": n,
            "mean_return": float(np.mean([e[1] for e in eps])) if n else float("nan"),
            "completion": count(Outcome.COMPLETION), "collision": count(Outcome.COLLISION),
            "timeout": count(Outcome.TIMEOUT),
            "mean_interactivity": ro.mean_w,
            "isi_loss": float(np.mean(stats["isi"])) if stats["isi"] else float("nan"),
            "tp_loss": float(np.mean(stats["tp"])) if stats["tp"] else float("nan"),
            "entropy": float(np.mean(stats["entropy"])) if stats["entropy"] else float("nan"),
            "rolled_back": rolled_back,
        }
        row.update(self._aux_eval(ro))
        row["seconds"] = round(time.time() - t0, 3)
        self.metrics.append(row)
        return row

    def train(self, out_dir: Optional[str] = None, log=None) -> list[dict]:
        iters = max(1, self.cfg.total_steps // self.cfg.steps_per_iter)
        while self.iteration < iters:
            row = self.train_iteration()
            if log is not None:
                log(row)
            if out_dir is not None:
                self.save(out_dir)
        return self.metrics

    def save(self, out_dir: str) -> None:
        self.agent.save(out_dir)
        atomic_write_text(os.path.join(out_dir, "metrics.csv"), metrics_csv(self.metrics, self.cfg.digest()))


def metrics_csv(rows: list[dict], digest: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS + ["config_digest"])
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in METRIC_FIELDS] + [digest])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v
