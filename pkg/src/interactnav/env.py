"""Decision-process wrapper around the simulator.

The ego picks one of three target speeds each tick; a PD controller turns the
target into an acceleration and a proximity check can override it with an
emergency brake. Observations are noisy per-agent records in a fixed slot
layout: ego first, then vehicles, then pedestrians, each group sorted by
distance to the ego and zero padded.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional

import numpy as np

from .sim.world import (
    AgentKind,
    ConfigError,
    SimConfig,
    WorldState,
    footprint_overlaps,
    reset_world,
    step_world,
)

ACTIONS = (0.0, 1.0, 4.5)
V_REF = 4.5
KIND_CODE = {AgentKind.EGO: 0.0, AgentKind.VEHICLE: 1.0, AgentKind.PEDESTRIAN: 2.0}


class Outcome(str, enum.Enum):
    RUNNING = "Running"
    COMPLETION = "Completion"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    noise_std: float = 0.05
    noise_ego: bool = True
    horizon: int = 250
    history: int = 10
    t_future: int = 10
    kp: float = 2.0
    kd: float = 0.1
    a_max: float = 3.0
    b_emergency: float = 4.0
    safety_radius: float = 3.0
    goal_margin: float = 1.0
    r_goal: float = 2.0
    r_collision: float = -2.0
    r_speed: float = 0.01
    emit_labels: bool = False
    label_futures: bool = False

    @property
    def n_vehicles(self) -> int:
        return self.sim.max_vehicles

    @property
    def n_pedestrians(self) -> int:
        return self.sim.max_pedestrians

    @property
    def n_slots(self) -> int:
        return 1 + self.n_vehicles + self.n_pedestrians

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "EnvConfig":
        d = dict(d or {})
        sim = SimConfig.from_dict(d.pop("sim", None))
        known = {f.name for f in fields(cls)} - {"sim"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown environment config keys: {sorted(unknown)}")
        cfg = cls(sim=sim, **d)
        if cfg.horizon <= 0 or cfg.history <= 0 or cfg.t_future <= 0:
            raise ConfigError("horizon, history and t_future must be positive")
        if cfg.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        return d

    @classmethod
    def load(cls, path) -> "EnvConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def reduced_config(**overrides) -> EnvConfig:
    """Small scene used for desk-scale training: up to 4 vehicles and 2 pedestrians."""
    sim = SimConfig(max_vehicles=4, min_vehicles=2, max_pedestrians=2, min_pedestrians=1)
    sim_over = overrides.pop("sim", {})
    for k, v in sim_over.items():
        setattr(sim, k, v)
    sim.validate()
    return EnvConfig(sim=sim, **overrides)


@dataclass
class Observation:
    """Slot-ordered agent records.

    ``feats`` has one row ``[x, y, vx, vy, kind]`` per slot. Slot 0 is the ego,
    slots ``1..n_vehicles`` vehicles, the rest pedestrians.
    """

    feats: np.ndarray
    mask: np.ndarray
    ids: np.ndarray
    tick: int

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class Labels:
    """Ground truth aligned with the observation slots of the same tick."""

    conservative: np.ndarray
    yields: np.ndarray
    vehicle_mask: np.ndarray
    future: Optional[np.ndarray] = None
    future_mask: Optional[np.ndarray] = None


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    outcome: Outcome
    labels: Optional[Labels]
    tick: int


@dataclass
class Window:
    """History tensor for the encoder: ``x`` is (W, S, 4), ``tmask`` (W, S)."""

    x: np.ndarray
    tmask: np.ndarray
    mask: np.ndarray
    ids: np.ndarray


def reward(goal: bool, collision: bool, speed: float, cfg: Optional[EnvConfig] = None) -> float:
    cfg = cfg or EnvConfig()
    r = cfg.r_speed * abs(speed) / V_REF
    if goal:
        r += cfg.r_goal
    if collision:
        r += cfg.r_collision
    return r


def pd_control(target: float, current: float, prev_error: float, kp: float = 2.0,
               kd: float = 0.1, dt: float = 0.1, a_min: float = -4.0, a_max: float = 3.0) -> float:
    e = target - current
    a = kp * e + kd * (e - prev_error) / dt
    return min(max(a, a_min), a_max)


def safety_check(world: WorldState, radius: float = 3.0, brake: float = 4.0) -> Optional[float]:
    """Emergency deceleration when some agent is within ``radius`` of the ego and closing."""
    ego = world.ego
    if ego is None:
        return None
    evx, evy = ego.velocity
    r2 = radius * radius
    for b in world.agents[1:]:
        dx = b.x - ego.x
        dy = b.y - ego.y
        if dx * dx + dy * dy >= r2:
            continue
        bvx, bvy = b.velocity
        if dx * (bvx - evx) + dy * (bvy - evy) < 0.0:
            return -brake
    return None


def _slot_order(world: WorldState, cx: float, cy: float, pos: dict) -> tuple[list, list]:
    veh, ped = [], []
    for a in world.agents:
        if a.kind is AgentKind.EGO:
            continue
        x, y = pos[a.id]
        d = math.hypot(x - cx, y - cy)
        (veh if a.kind is AgentKind.VEHICLE else ped).append((d, a.id, a))
    veh.sort(key=lambda t: (t[0], t[1]))
    ped.sort(key=lambda t: (t[0], t[1]))
    return veh, ped


def observe(world: WorldState, cfg: EnvConfig, noise_rng: np.random.Generator) -> Observation:
    """Noisy observation of ``world``. Agents beyond the slot budget are dropped."""
    agents = world.agents
    n = len(agents)
    true = np.empty((n, 4))
    for k, a in enumerate(agents):
        vx, vy = a.velocity
        true[k] = (a.x, a.y, vx, vy)
    noisy = true + noise_rng.normal(0.0, cfg.noise_std, size=true.shape) if cfg.noise_std > 0 else true.copy()
    ego = world.ego
    if ego is not None and not cfg.noise_ego:
        noisy[0] = true[0]
    pos = {a.id: (noisy[k, 0], noisy[k, 1]) for k, a in enumerate(agents)}
    row = {a.id: k for k, a in enumerate(agents)}
    cx, cy = (noisy[0, 0], noisy[0, 1]) if ego is not None else (0.0, 0.0)
    veh, ped = _slot_order(world, cx, cy, pos)

    S = cfg.n_slots
    feats = np.zeros((S, 5))
    mask = np.zeros(S)
    ids = np.full(S, -1, dtype=np.int64)
    if ego is not None:
        feats[0, :4] = noisy[0]
        feats[0, 4] = KIND_CODE[AgentKind.EGO]
        mask[0] = 1.0
        ids[0] = ego.id
    for base, group, cap in ((1, veh, cfg.n_vehicles), (1 + cfg.n_vehicles, ped, cfg.n_pedestrians)):
        for k, (_d, aid, a) in enumerate(group[:cap]):
            feats[base + k, :4] = noisy[row[aid]]
            feats[base + k, 4] = KIND_CODE[a.kind]
            mask[base + k] = 1.0
            ids[base + k] = aid
    return Observation(feats, mask, ids, world.tick)


def internal_labels(world: WorldState, obs: Observation, cfg: EnvConfig) -> Labels:
    nv = cfg.n_vehicles
    cons = np.zeros(nv)
    yld = np.zeros(nv)
    vm = np.zeros(nv)
    by_id = {a.id: a for a in world.agents}
    for k in range(nv):
        aid = int(obs.ids[1 + k])
        if aid < 0:
            continue
        a = by_id[aid]
        cons[k] = float(a.internal.conservative)
        yld[k] = float(a.internal.yields)
        vm[k] = 1.0
    return Labels(cons, yld, vm)


def ground_truth_future(world: WorldState, t_future: int, ids: Optional[Iterable[int]] = None,
                        ego_target: Optional[float] = None, prev_error: float = 0.0,
                        cfg: Optional[EnvConfig] = None) -> dict:
    """Positions of every simulated agent over the next ``t_future`` ticks.

    Rolls a clone forward. With ``ego_target`` the ego keeps tracking that
    target speed through the PD controller, otherwise it holds its current
    acceleration command. Agents that leave the scene early get fewer than
    ``t_future`` rows.
    """
    cfg = cfg or EnvConfig()
    sim = world.clone()
    wanted = None if ids is None else set(int(i) for i in ids)
    out: dict[int, list] = {}
    for _ in range(t_future):
        ego = sim.ego
        if ego is not None and ego_target is not None:
            e = ego_target - ego.speed
            sim.ego_command = pd_control(ego_target, ego.speed, prev_error, cfg.kp, cfg.kd, sim.dt,
                                         -cfg.b_emergency, cfg.a_max)
            prev_error = e
            brake = safety_check(sim, cfg.safety_radius, cfg.b_emergency)
            if brake is not None:
                sim.ego_command = brake
        step_world(sim)
        for a in sim.agents:
            if a.kind is AgentKind.EGO:
                continue
            if wanted is not None and a.id not in wanted:
                continue
            out.setdefault(a.id, []).append((a.x, a.y))
    return {k: np.asarray(v) for k, v in out.items()}


def future_tensor(futures: dict, ids: np.ndarray, t_future: int) -> tuple[np.ndarray, np.ndarray]:
    fut = np.zeros((t_future, len(ids), 2))
    fmask = np.zeros(len(ids))
    for k, aid in enumerate(ids):
        track = futures.get(int(aid))
        if aid >= 0 and track is not None and len(track) == t_future:
            fut[:, k] = track
            fmask[k] = 1.0
    return fut, fmask


class History:
    """Per-agent rolling buffers of observed [x, y, vx, vy]."""

    def __init__(self, length: int):
        self.length = length
        self.buf: dict[int, deque] = {}

    def push(self, obs: Observation) -> None:
        seen = set()
        for k in np.flatnonzero(obs.mask):
            aid = int(obs.ids[k])
            seen.add(aid)
            self.buf.setdefault(aid, deque(maxlen=self.length)).append(obs.feats[k, :4].copy())
        for aid in list(self.buf):
            if aid not in seen:
                del self.buf[aid]

    def window(self, obs: Observation) -> Window:
        W, S = self.length, len(obs.ids)
        x = np.zeros((W, S, 4))
        tm = np.zeros((W, S))
        for k in np.flatnonzero(obs.mask):
            rows = self.buf.get(int(obs.ids[k]))
            if not rows:
                continue
            n = len(rows)
            x[W - n:, k] = np.asarray(rows)
            tm[W - n:, k] = 1.0
        return Window(x, tm, obs.mask.copy(), obs.ids.copy())


class IntersectionEnv:
    """Left-turn task at the four-way intersection."""

    actions = ACTIONS

    def __init__(self, cfg: Optional[EnvConfig] = None):
        self.cfg = cfg or EnvConfig()
        self.world: Optional[WorldState] = None
        self.done = True
        self.outcome = Outcome.RUNNING
        self.prev_error = 0.0
        self.action = 0
        self.history = History(self.cfg.history)
        self.obs: Optional[Observation] = None
        self.label_access = False

    def reset(self, seed: int = 0, episode: int = 0) -> Observation:
        sim_cfg = self.cfg.sim
        if not sim_cfg.ego:
            raise ConfigError("the decision environment needs the ego enabled")
        self.world = reset_world(sim_cfg, seed=seed, episode=episode)
        self.noise_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(episode), 1])))
        self.done = False
        self.label_access = False
        self.outcome = Outcome.RUNNING
        ego = self.world.ego
        self.prev_error = 0.0 - ego.speed
        self.action = 0
        self.goal_s = self.world.map.ego_turn_path.length - self.cfg.goal_margin
        self.history = History(self.cfg.history)
        self.obs = observe(self.world, self.cfg, self.noise_rng)
        self.history.push(self.obs)
        return self.obs

    def window(self) -> Window:
        return self.history.window(self.obs)

    def labels(self) -> Labels:
        self.label_access = True
        lab = internal_labels(self.world, self.obs, self.cfg)
        if self.cfg.label_futures:
            fut = self.ground_truth_future(ids=self.obs.ids[self.obs.ids >= 0])
            lab.future, lab.future_mask = future_tensor(fut, self.obs.ids, self.cfg.t_future)
        return lab

    def ego_accel(self, action: int) -> float:
        cfg = self.cfg
        ego = self.world.ego
        target = ACTIONS[action]
        e = target - ego.speed
        a = pd_control(target, ego.speed, self.prev_error, cfg.kp, cfg.kd, self.world.dt,
                       -cfg.b_emergency, cfg.a_max)
        self.prev_error = e
        brake = safety_check(self.world, cfg.safety_radius, cfg.b_emergency)
        return a if brake is None else brake

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode finished; call reset()")
        if action not in (0, 1, 2):
            raise ValueError(f"action must be 0, 1 or 2, got {action!r}")
        cfg = self.cfg
        self.action = action
        self.world.ego_command = self.ego_accel(action)
        step_world(self.world)
        ego = self.world.ego
        collision = bool(footprint_overlaps(self.world, ego_only=True))
        goal = ego.s >= self.goal_s and not collision
        r = reward(goal, collision, ego.speed, cfg)
        if collision:
            self.outcome = Outcome.COLLISION
        elif goal:
            self.outcome = Outcome.COMPLETION
        elif self.world.tick >= cfg.horizon:
            self.outcome = Outcome.TIMEOUT
        self.done = self.outcome is not Outcome.RUNNING
        self.obs = observe(self.world, cfg, self.noise_rng)
        self.history.push(self.obs)
        labels = self.labels() if cfg.emit_labels else None
        return StepResult(self.obs, r, self.done, self.outcome, labels, self.world.tick)

    def ground_truth_future(self, t_future: Optional[int] = None, ids=None) -> dict:
        self.label_access = True
        return ground_truth_future(self.world, t_future or self.cfg.t_future, ids,
                                   ACTIONS[self.action], self.prev_error, self.cfg)


@dataclass
class EpisodeRecord:
    observations: list
    actions: list
    rewards: list
    labels: list
    outcome: Outcome
    seed: int

    @property
    def length(self) -> int:
        return len(self.actions)


def run_scripted(env: IntersectionEnv, action: int, seed: int = 0, episode: int = 0) -> EpisodeRecord:
    """Roll one episode with a constant action."""
    obs = env.reset(seed, episode)
    rec = EpisodeRecord([obs], [], [], [], Outcome.RUNNING, seed)
    while True:
        res = env.step(action)
        rec.observations.append(res.observation)
        rec.actions.append(action)
        rec.rewards.append(res.reward)
        rec.labels.append(res.labels)
        if res.done:
            rec.outcome = res.outcome
            return rec


# --------------------------------------------------------------------------- no-ego data

@dataclass
class SceneSamples:
    """Stacked scene snapshots for the counterfactual predictor.

    ``x`` (B, W, S, 4) histories, ``tmask`` (B, W, S), ``mask`` (B, S),
    ``future`` (B, T, S, 2) and ``fmask`` (B, S) marking agents with a full
    history and a full future.
    """

    x: np.ndarray
    tmask: np.ndarray
    mask: np.ndarray
    future: np.ndarray
    fmask: np.ndarray
    scene: np.ndarray
    tick: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return len(self.x)

    @property
    def n_pairs(self) -> int:
        return int(self.fmask.sum())

    def subset(self, idx) -> "SceneSamples":
        return SceneSamples(*(getattr(self, f.name)[idx] for f in fields(self)))

    def records(self, cfg: EnvConfig) -> Iterable[dict]:
        nv = cfg.n_vehicles
        for b in range(len(self)):
            for k in np.flatnonzero(self.fmask[b]):
                kind = AgentKind.VEHICLE if 1 <= k <= nv else AgentKind.PEDESTRIAN
                yield {
                    "scene": int(self.scene[b]), "tick": int(self.tick[b]), "id": int(self.ids[b, k]),
                    "kind": kind.value,
                    "history": np.round(self.x[b, :, k], 6).tolist(),
                    "future": np.round(self.future[b, :, k], 6).tolist(),
                }

    def save_jsonl(self, path, cfg: EnvConfig) -> int:
        n = 0
        with open(path, "w") as fh:
            for rec in self.records(cfg):
                fh.write(json.dumps(rec) + "\n")
                n += 1
        return n


def _empty_samples(cfg: EnvConfig) -> SceneSamples:
    W, T, S = cfg.history, cfg.t_future, cfg.n_slots
    return SceneSamples(np.zeros((0, W, S, 4)), np.zeros((0, W, S)), np.zeros((0, S)),
                        np.zeros((0, T, S, 2)), np.zeros((0, S)), np.zeros(0, np.int64),
                        np.zeros(0, np.int64), np.zeros((0, S), np.int64))


def _episode_samples(obs_seq: list, true_pos: list, cfg: EnvConfig, scene: int) -> list:
    """Sliding windows over one recorded episode.

    ``true_pos[t]`` maps agent id to its true position at snapshot ``t``.
    """
    W, T = cfg.history, cfg.t_future
    hist = History(W)
    out = []
    for t, obs in enumerate(obs_seq):
        hist.push(obs)
        if t + T >= len(obs_seq):
            break
        win = hist.window(obs)
        fut = np.zeros((T, len(obs.ids), 2))
        fmask = np.zeros(len(obs.ids))
        for k in np.flatnonzero(obs.mask):
            aid = int(obs.ids[k])
            if win.tmask[0, k] == 0.0:
                continue
            track = [true_pos[t + d].get(aid) for d in range(1, T + 1)]
            if any(p is None for p in track):
                continue
            fut[:, k] = track
            fmask[k] = 1.0
        out.append((win, fut, fmask, scene, obs.tick))
    return out


def _stack(items: list, cfg: EnvConfig) -> SceneSamples:
    if not items:
        return _empty_samples(cfg)
    return SceneSamples(
        np.stack([w.x for w, *_ in items]), np.stack([w.tmask for w, *_ in items]),
        np.stack([w.mask for w, *_ in items]), np.stack([f for _, f, *_ in items]),
        np.stack([m for _, _, m, *_ in items]), np.array([s for *_, s, _ in items], dtype=np.int64),
        np.array([t for *_, t in items], dtype=np.int64), np.stack([w.ids for w, *_ in items]))


def collect_noego_dataset(cfg: EnvConfig, seeds: Iterable[int], episodes: int,
                          steps: Optional[int] = None) -> SceneSamples:
    """Simulate episodes without the ego and slice them into history/future windows."""
    if cfg.sim.ego:
        raise ConfigError("no-ego collection needs sim.ego disabled")
    steps = cfg.horizon if steps is None else steps
    items = []
    scene = 0
    for seed in seeds:
        for ep in range(episodes):
            world = reset_world(cfg.sim, seed=seed, episode=ep)
            noise = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(ep), 1])))
            obs_seq, true_pos = [], []
            for t in range(steps + 1):
                if t:
                    step_world(world)
                obs_seq.append(observe(world, cfg, noise))
                true_pos.append({a.id: (a.x, a.y) for a in world.agents})
            items.extend(_episode_samples(obs_seq, true_pos, cfg, scene))
            scene += 1
    return _stack(items, cfg)


def hindsight_futures(true_pos: list, ids_seq: list, t_future: int) -> tuple[np.ndarray, np.ndarray]:
    """Futures read off a finished episode: (N, T, S, 2) and (N, S) masks."""
    n = len(ids_seq)
    S = len(ids_seq[0])
    fut = np.zeros((n, t_future, S, 2))
    fm = np.zeros((n, S))
    for t in range(n):
        if t + t_future >= len(true_pos):
            continue
        for k, aid in enumerate(ids_seq[t]):
            if aid < 0 or k == 0:
                continue
            track = [true_pos[t + d].get(int(aid)) for d in range(1, t_future + 1)]
            if any(p is None for p in track):
                continue
            fut[t, :, k] = track
            fm[t, k] = 1.0
    return fut, fm
