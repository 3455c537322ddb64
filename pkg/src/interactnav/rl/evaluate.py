"""Test-time rollouts with inferred beliefs.

The controller only sees observations: beliefs come from the inference head
and interactivity from the two predictors. Ground-truth internal states are
read by the harness afterwards for scoring and never reach the policy input.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..env import EnvConfig, IntersectionEnv, Outcome, internal_labels
from ..learn import tape as T
from .agent import Agent
from .policy import Manipulation


@dataclass
class TestRecord:
    __test__ = False  # not a pytest class

    seed: int
    episode: int
    outcome: Outcome
    ticks: int
    ret: float
    dt: float
    actions: list = field(default_factory=list)
    trait_hits: int = 0
    intention_hits: int = 0
    vehicle_steps: int = 0
    label_access: bool = False

    @property
    def time_to_completion(self) -> float:
        return self.ticks * self.dt if self.outcome is Outcome.COMPLETION else float("nan")


def test_env_config(agent: Agent, p_aggressive: Optional[float] = None,
                    pedestrians: Optional[bool] = None) -> EnvConfig:
    """The agent's environment with optional test-time overrides and no label emission."""
    cfg = agent.cfg.env_config
    sim = cfg.sim
    if p_aggressive is not None:
        if not 0.0 <= p_aggressive <= 1.0:
            raise ValueError("p_aggressive must lie in [0, 1]")
        sim = dataclasses.replace(sim, p_aggressive=float(p_aggressive))
    if pedestrians is not None:
        sim = dataclasses.replace(sim, pedestrians=bool(pedestrians))
    sim.validate()
    return dataclasses.replace(cfg, sim=sim, emit_labels=False, label_futures=False)


def episode_rngs(seed: int, episode: int):
    action = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(episode), 2])))
    manip = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(episode), 3])))
    return action, manip


def run_test_episodes(agent: Agent, seed: int, episodes: int, env_cfg: Optional[EnvConfig] = None,
                      manipulation="none", batch: int = 16, greedy: bool = False,
                      first_episode: int = 0) -> list[TestRecord]:
    """Run ``episodes`` test episodes in lockstep batches; records come back in episode order.

    Each episode draws actions and belief manipulations from its own streams,
    so a record depends only on (checkpoint, config, seed, episode index).
    """
    Manipulation(manipulation)
    cfg = env_cfg or test_env_config(agent)
    if cfg.emit_labels or cfg.label_futures:
        raise ValueError("test episodes must not emit labels")
    nv = cfg.n_vehicles
    H = agent.cfg.hidden
    todo = list(range(first_episode, first_episode + episodes))
    records: dict[int, TestRecord] = {}
    n = min(batch, episodes)
    envs = [IntersectionEnv(cfg) for _ in range(n)]
    slots: list[Optional[dict]] = [None] * n

    def start(k):
        if not todo:
            slots[k] = None
            return
        ep = todo.pop(0)
        envs[k].reset(seed, ep)
        a_rng, m_rng = episode_rngs(seed, ep)
        slots[k] = {"rec": TestRecord(seed, ep, Outcome.RUNNING, 0, 0.0, envs[k].world.dt),
                    "a_rng": a_rng, "m_rng": m_rng, "h": np.zeros(H), "c": np.zeros(H)}

    for k in range(n):
        start(k)
    while any(s is not None for s in slots):
        live = [k for k in range(n) if slots[k] is not None]
        obs = [envs[k].obs for k in live]
        wins = [envs[k].window() for k in live]
        mask = np.stack([o.mask for o in obs])
        f = agent.features(np.stack([o.feats for o in obs]), mask, np.stack([w.x for w in wins]),
                           np.stack([w.tmask for w in wins]), infer=True, manipulation=manipulation,
                           manip_rngs=[slots[k]["m_rng"] for k in live])
        h = np.stack([slots[k]["h"] for k in live])
        c = np.stack([slots[k]["c"] for k in live])
        with T.no_grad():
            p, h2, c2 = agent.policy.distribution(T.Tensor(f.x), T.Tensor(h), T.Tensor(c))
        for j, k in enumerate(live):
            s = slots[k]
            s["h"], s["c"] = h2.data[j], c2.data[j]
            if greedy:
                a = int(np.argmax(p[j]))
            else:
                a = int(min(np.searchsorted(np.cumsum(p[j]), s["a_rng"].random(), side="right"), 2))
            rec = s["rec"]
            if f.beliefs is not None:
                # harness-side scoring against the simulator's hidden state
                lab = internal_labels(envs[k].world, obs[j], cfg)
                vm = lab.vehicle_mask > 0
                pc, py = f.beliefs[0][j], f.beliefs[1][j]
                rec.trait_hits += int(((pc >= 0.5) == (lab.conservative > 0.5))[vm].sum())
                rec.intention_hits += int(((py >= 0.5) == (lab.yields > 0.5))[vm].sum())
                rec.vehicle_steps += int(vm.sum())
            res = envs[k].step(a)
            rec.actions.append(a)
            rec.ret += res.reward
            rec.label_access = rec.label_access or envs[k].label_access
            if res.done:
                rec.outcome = res.outcome
                rec.ticks = res.tick
                records[rec.episode] = rec
                start(k)
    return [records[e] for e in sorted(records)]


def run_test_episode(agent: Agent, seed: int, episode: int = 0, env_cfg: Optional[EnvConfig] = None,
                     manipulation="none", greedy: bool = False) -> TestRecord:
    return run_test_episodes(agent, seed, 1, env_cfg, manipulation, batch=1, greedy=greedy,
                             first_episode=episode)[0]
