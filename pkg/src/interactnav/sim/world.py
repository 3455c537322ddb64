"""World state and the per-tick transition for all simulated agents.

Simulated vehicles follow IDM along fixed reference paths. Each tick a
vehicle collects every constraint acting on it (real leaders in its corridor,
virtual static leaders at crosswalk stop lines or in front of conflict zones)
and drives against the tightest one. Pedestrians walk at constant speed and
stop only while an agent footprint occupies the space just ahead of them.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ..scenario import IntersectionMap, default_map, rects_overlap
from .drivers import (
    DriverParams,
    InternalState,
    Trait,
    idm_accel,
    sample_driver_params,
    sample_internal_state,
)

DT = 0.1
CORRIDOR_MARGIN = 0.3
LOOKAHEAD = 80.0
ALIGNED_COS = math.cos(math.radians(30.0))


class ConfigError(ValueError):
    pass


class AgentKind(str, enum.Enum):
    EGO = "EgoVehicle"
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"


class InteractionType(str, enum.Enum):
    YIELD = "Yield"
    NOT_YIELD = "NotYield"
    FOLLOW = "Follow"
    NONE = "None"


@dataclass
class SimConfig:
    """Everything the simulator needs besides the map. Serialises to JSON."""

    seed: int = 0
    p_aggressive: float = 0.5
    max_vehicles: int = 8
    min_vehicles: int = 4
    max_pedestrians: int = 4
    min_pedestrians: int = 2
    pedestrians: bool = True
    ego: bool = True
    headway_min: float = 2.5
    headway_max: float = 5.0
    vertical_vehicle_prob: float = 0.5
    sigma_v: float = 0.1
    v_ped: float = 1.4
    ped_size: float = 0.5
    ped_lookahead: float = 1.0
    ped_yield_horizon: float = 3.0
    ped_spawn_prob: float = 0.03
    vehicle_length: float = 4.8
    vehicle_width: float = 1.8
    hard_brake: float = 6.0
    ego_engage_distance: float = 2.0
    ego_start_gap_min: float = 3.0
    ego_start_gap_max: float = 15.0
    ego_start_speed_max: float = 3.0
    vertical_horizon: float = 4.0
    spawn_exclusion: float = 10.0
    record_overlaps: bool = True

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SimConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if not 0.0 <= self.p_aggressive <= 1.0:
            raise ConfigError("p_aggressive must lie in [0, 1]")
        if self.min_vehicles > self.max_vehicles or self.max_vehicles < 0:
            raise ConfigError("need 0 <= min_vehicles <= max_vehicles")
        if self.min_pedestrians > self.max_pedestrians or self.max_pedestrians < 0:
            raise ConfigError("need 0 <= min_pedestrians <= max_pedestrians")
        if not 0 < self.headway_min <= self.headway_max:
            raise ConfigError("bad headway range")


class AgentState:
    __slots__ = ("id", "kind", "path_id", "s", "speed", "x", "y", "ux", "uy",
                 "length", "width", "hx", "hy", "internal", "params", "role",
                 "departed", "yield_ego")

    def __init__(self, id, kind, path_id, s, speed, length, width, role,
                 internal=None, params=None):
        self.id = id
        self.kind = kind
        self.path_id = path_id
        self.s = s
        self.speed = speed
        self.length = length
        self.width = width
        self.role = role
        self.internal = internal
        self.params = params
        self.departed = role != "vertical"
        self.yield_ego = False
        self.x = self.y = self.ux = self.uy = self.hx = self.hy = 0.0

    def place(self, path) -> None:
        self.x, self.y = path.point_at(self.s)
        self.ux, self.uy = path.heading_at(self.s)
        hl, hw = self.length / 2, self.width / 2
        self.hx = abs(self.ux) * hl + abs(self.uy) * hw
        self.hy = abs(self.uy) * hl + abs(self.ux) * hw

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y

    @property
    def velocity(self) -> tuple[float, float]:
        return self.speed * self.ux, self.speed * self.uy

    def copy(self) -> "AgentState":
        new = AgentState.__new__(AgentState)
        for k in AgentState.__slots__:
            setattr(new, k, getattr(self, k))
        return new

    def __repr__(self):
        return (f"AgentState(id={self.id}, {self.kind.value}, {self.path_id}, "
                f"s={self.s:.2f}, v={self.speed:.2f})")


@dataclass
class WorldState:
    tick: int
    agents: list
    rng: np.random.Generator
    map: IntersectionMap
    cfg: SimConfig
    dt: float = DT
    next_id: int = 0
    next_spawn: dict = field(default_factory=dict)
    ego_command: float = 0.0
    ego_completed: bool = False
    overlaps: list = field(default_factory=list)
    seed: int = 0
    episode: int = 0

    @property
    def ego(self) -> Optional[AgentState]:
        if self.agents and self.agents[0].kind is AgentKind.EGO:
            return self.agents[0]
        return None

    def clone(self) -> "WorldState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = copy.deepcopy(self.rng.bit_generator.state)
        return WorldState(
            tick=self.tick, agents=[a.copy() for a in self.agents], rng=rng, map=self.map,
            cfg=self.cfg, dt=self.dt, next_id=self.next_id, next_spawn=dict(self.next_spawn),
            ego_command=self.ego_command, ego_completed=self.ego_completed,
            overlaps=list(self.overlaps), seed=self.seed, episode=self.episode)

    def digest(self) -> str:
        """Stable hash of the dynamic state (agents, clock, rng)."""
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.tick, self.next_id, sorted(self.next_spawn.items()),
                       self.ego_command, self.ego_completed)).encode())
        for a in self.agents:
            h.update(repr((a.id, a.kind.value, a.path_id, a.s, a.speed, a.departed, a.yield_ego,
                           a.internal, a.params)).encode())
        h.update(json.dumps(self.rng.bit_generator.state, sort_keys=True, default=int).encode())
        return h.hexdigest()


def episode_rng(seed: int, episode: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(episode)])))


def _new_agent(world: WorldState, kind, path_id, s, speed, role, internal=None, params=None):
    cfg = world.cfg
    if kind is AgentKind.PEDESTRIAN:
        length = width = cfg.ped_size
    else:
        length, width = cfg.vehicle_length, cfg.vehicle_width
    a = AgentState(world.next_id, kind, path_id, s, speed, length, width, role, internal, params)
    world.next_id += 1
    a.place(world.map.path(path_id))
    return a


def add_agent(world: WorldState, kind: AgentKind, path_id: str, s: float, speed: float,
              internal: Optional[InternalState] = None, params: Optional[DriverParams] = None,
              role: Optional[str] = None) -> AgentState:
    """Place a hand-specified agent into ``world`` (for building test scenes)."""
    kind = AgentKind(kind)
    if role is None:
        role = {AgentKind.EGO: "ego", AgentKind.PEDESTRIAN: "ped"}.get(kind)
        if role is None:
            role = "vertical" if path_id in ("north", "south") else "horizontal"
    if kind is AgentKind.VEHICLE and (internal is None or params is None):
        raise ConfigError("vehicles need an internal state and driver parameters")
    a = _new_agent(world, kind, path_id, s, speed, role, internal, params)
    if kind is AgentKind.EGO:
        world.agents.insert(0, a)
    else:
        world.agents.append(a)
    return a


def empty_world(cfg: Optional[SimConfig] = None, seed: int = 0) -> WorldState:
    """A world with no agents and spawning disabled."""
    cfg = cfg or SimConfig(ego=False, pedestrians=False, max_vehicles=0, min_vehicles=0)
    world = WorldState(tick=0, agents=[], rng=episode_rng(seed, 0), map=default_map(), cfg=cfg, seed=seed)
    for lane in ("east", "west"):
        world.next_spawn[lane] = 10 ** 9
    return world


def _new_vehicle(world: WorldState, path_id: str, s: float, role: str) -> AgentState:
    st = sample_internal_state(world.rng, world.cfg.p_aggressive)
    params = sample_driver_params(st, world.rng, world.cfg.sigma_v)
    speed = 0.0 if role == "vertical" else params.v_star
    return _new_agent(world, AgentKind.VEHICLE, path_id, s, speed, role, st, params)


def _clear(world: WorldState, x: float, y: float, hx: float, hy: float) -> bool:
    for b in world.agents:
        if abs(b.x - x) < b.hx + hx and abs(b.y - y) < b.hy + hy:
            return False
    return True


def _count(world: WorldState, kind: AgentKind) -> int:
    return sum(1 for a in world.agents if a.kind is kind)


def _spawn_pedestrian(world: WorldState, s_max: float) -> bool:
    names = sorted(world.map.ped_paths)
    name = names[int(world.rng.integers(len(names)))]
    s = float(world.rng.uniform(0.25, max(s_max, 0.25)))
    path = world.map.ped_paths[name]
    x, y = path.point_at(s)
    if not _clear(world, x, y, world.cfg.ped_size / 2 + 1.0, world.cfg.ped_size / 2 + 1.0):
        return False
    world.agents.append(_new_agent(world, AgentKind.PEDESTRIAN, name, s, world.cfg.v_ped, "ped"))
    return True


def _headway_ticks(world: WorldState) -> int:
    h = world.rng.uniform(world.cfg.headway_min, world.cfg.headway_max)
    return int(round(h / world.dt))


def reset_world(cfg: SimConfig, seed: Optional[int] = None, episode: int = 0,
                imap: Optional[IntersectionMap] = None) -> WorldState:
    """Fresh world with sampled agents; the ego (if enabled) is agent 0."""
    seed = cfg.seed if seed is None else seed
    imap = imap or default_map()
    world = WorldState(tick=0, agents=[], rng=episode_rng(seed, episode), map=imap, cfg=cfg,
                       seed=seed, episode=episode)
    rng = world.rng
    if cfg.ego:
        stop = imap.stop_lines["ego"]
        gap = rng.uniform(cfg.ego_start_gap_min, cfg.ego_start_gap_max)
        s = max(stop - cfg.vehicle_length / 2 - gap, cfg.vehicle_length / 2)
        ego = _new_agent(world, AgentKind.EGO, "ego", s, float(rng.uniform(0.0, cfg.ego_start_speed_max)), "ego")
        world.agents.append(ego)

    if cfg.pedestrians and cfg.max_pedestrians > 0:
        n_ped = int(rng.integers(cfg.min_pedestrians, cfg.max_pedestrians + 1))
        ext = imap.config["sidewalk_extension"]
        tries = 0
        while _count(world, AgentKind.PEDESTRIAN) < n_ped and tries < 50:
            _spawn_pedestrian(world, ext - 0.5)
            tries += 1

    n_fixed = len(world.agents)
    if cfg.max_vehicles > 0 and rng.random() < cfg.vertical_vehicle_prob:
        stop = imap.stop_lines["south"]
        world.agents.append(_new_vehicle(world, "south", stop - 0.5 - cfg.vehicle_length / 2, "vertical"))
        n_fixed += 1

    base_agents = list(world.agents)
    base_id = world.next_id
    for _attempt in range(50):
        world.agents = list(base_agents)
        world.next_id = base_id
        lanes = ["east", "west"]
        if rng.random() < 0.5:
            lanes.reverse()
        for lane in lanes:
            path = imap.lanes[lane].path
            cws = imap.lane_crosswalks[lane]
            lo_ex = cws[0][1] - cfg.spawn_exclusion - cfg.vehicle_length / 2
            hi_ex = cws[-1][2] + cfg.vehicle_length / 2
            s = float(rng.uniform(cfg.vehicle_length / 2, 15.0))
            while s < path.length - cfg.vehicle_length / 2:
                if _count(world, AgentKind.VEHICLE) >= cfg.max_vehicles:
                    break
                if not lo_ex < s < hi_ex:
                    world.agents.append(_new_vehicle(world, lane, s, "horizontal"))
                s += float(rng.uniform(cfg.headway_min, cfg.headway_max)) * 8.7
        if _count(world, AgentKind.VEHICLE) >= min(cfg.min_vehicles, cfg.max_vehicles):
            break
    # upstream vehicles must come first on each lane so leaders are found quickly
    for lane in ("east", "west"):
        world.next_spawn[lane] = _headway_ticks(world)
    return world


# --------------------------------------------------------------------------- interactions

def _ego_release(imap: IntersectionMap, lane: str) -> float:
    z = imap.zone(lane, "ego")
    if not z.merge:
        return z.b_out
    for cp in imap.conflicts:
        if {cp.path_a, cp.path_b} == {lane, "ego"}:
            return cp.s_b if cp.path_b == "ego" else cp.s_a
    return z.b_out


def _scan(world: WorldState, i: int, collect: Optional[list] = None):
    """Tightest (gap, dv) acting on simulated vehicle ``i``.

    When ``collect`` is a list, every constraint and every non-constraining
    conflict is appended as ``(InteractionType, j, gap, dv)``.
    """
    agents = world.agents
    a = agents[i]
    cfg = world.cfg
    imap = world.map
    v = a.speed
    hl = a.length / 2
    front = a.s + hl
    best_gap = math.inf
    best_dv = 0.0
    stop_dist = v * v / (2.0 * cfg.hard_brake)

    # real leaders and obstacles inside the driving corridor
    for j, b in enumerate(agents):
        if j == i:
            continue
        dx = b.x - a.x
        dy = b.y - a.y
        lon = dx * a.ux + dy * a.uy
        if lon <= 0.0 or lon > LOOKAHEAD:
            continue
        cos_rel = b.ux * a.ux + b.uy * a.uy
        if b.kind is AgentKind.EGO and a.role == "horizontal" and cos_rel < ALIGNED_COS:
            continue
        lat = dy * a.ux - dx * a.uy
        c = abs(cos_rel)
        sn = abs(b.ux * a.uy - b.uy * a.ux)
        ext_lat = sn * b.length / 2 + c * b.width / 2
        if abs(lat) >= a.width / 2 + ext_lat + CORRIDOR_MARGIN:
            continue
        ext_lon = c * b.length / 2 + sn * b.width / 2
        gap = lon - hl - ext_lon
        if gap <= 1e-3:
            gap = 1e-3
        dv = v - b.speed * cos_rel
        if gap < best_gap:
            best_gap, best_dv = gap, dv
        if collect is not None:
            kind = InteractionType.FOLLOW if b.kind is not AgentKind.PEDESTRIAN else InteractionType.YIELD
            collect.append((kind, j, gap, dv))

    # crosswalks: virtual static leader at the first stop line while pedestrians
    # cross any crosswalk on the path; once past that line the vehicle is
    # committed, since the box between crosswalks cannot hold a stopped car
    cws = imap.lane_crosswalks[a.path_id]
    if cws and front < cws[0][1] and cws[0][1] - front <= LOOKAHEAD:
        gap = cws[0][1] - front
        for j, b in enumerate(agents):
            if b.kind is not AgentKind.PEDESTRIAN:
                continue
            band = imap.ped_bands.get((a.path_id, b.path_id))
            if band is None:
                continue
            half = b.length / 2
            if b.s - half < band[2] and band[1] - (b.s + half) <= cfg.v_ped * cfg.ped_yield_horizon:
                if gap >= stop_dist or v < 0.5:
                    if gap < best_gap:
                        best_gap, best_dv = gap, v
                    if collect is not None:
                        collect.append((InteractionType.YIELD, j, gap, v))
                elif collect is not None:
                    collect.append((InteractionType.NOT_YIELD, j, gap, v))

    if a.role == "horizontal":
        ego = world.ego
        if ego is not None:
            z = imap.zone(a.path_id, "ego")
            release = _ego_release(imap, a.path_id)
            engaged = (ego.s + ego.length / 2 >= imap.stop_lines["ego"] - cfg.ego_engage_distance
                       and ego.s < release)
            if a.internal.yields:
                gap = z.a_in - a.s
                if engaged and gap > 0.0 and (a.yield_ego or gap >= stop_dist or v < 0.5):
                    a.yield_ego = True
                    if gap < best_gap:
                        best_gap, best_dv = gap, v
                    if collect is not None:
                        collect.append((InteractionType.YIELD, 0, gap, v))
                else:
                    a.yield_ego = False
                    if collect is not None and engaged:
                        collect.append((InteractionType.NOT_YIELD, 0, gap, v))
            elif collect is not None and engaged and a.s < z.a_out:
                collect.append((InteractionType.NOT_YIELD, 0, z.a_in - a.s, v))
        # crossing traffic from the stop-sign branch never yields once it has left
        for j, b in enumerate(agents):
            if b.role != "vertical" or not b.departed:
                continue
            z = imap.zone(a.path_id, b.path_id)
            if z is None or b.s >= z.b_out or a.s >= z.a_in:
                continue
            gap = z.a_in - a.s
            if gap < best_gap:
                best_gap, best_dv = gap, v
            if collect is not None:
                collect.append((InteractionType.YIELD, j, gap, v))
    elif a.role == "vertical" and not a.departed:
        gap = max(imap.stop_lines[a.path_id] - front, 1e-3)
        if gap < best_gap:
            best_gap, best_dv = gap, v
    return best_gap, best_dv


def effective_gap(world: WorldState, i: int) -> tuple[float, float]:
    """Bumper gap and approaching rate of the tightest constraint on vehicle ``i``."""
    return _scan(world, i)


def classify_interaction(world: WorldState, i: int, j: int) -> InteractionType:
    a = world.agents[i]
    if a.kind is not AgentKind.VEHICLE:
        raise ValueError("classify_interaction expects a simulated vehicle as first agent")
    found: list = []
    saved = a.yield_ego
    _scan(world, i, found)
    a.yield_ego = saved
    types = [t for t, jj, _g, _d in found if jj == j]
    b = world.agents[j]
    if InteractionType.FOLLOW in types and b.path_id == a.path_id:
        return InteractionType.FOLLOW
    if InteractionType.YIELD in types:
        return InteractionType.YIELD
    if InteractionType.NOT_YIELD in types:
        return InteractionType.NOT_YIELD
    if InteractionType.FOLLOW in types:
        return InteractionType.FOLLOW
    return InteractionType.NONE


def _vertical_may_depart(world: WorldState, a: AgentState) -> bool:
    cfg = world.cfg
    imap = world.map
    ego = world.ego
    if ego is not None:
        if a.internal.conservative and not world.ego_completed:
            return False
        z = imap.zone("ego", a.path_id)
        if z.a_in - 3.0 < ego.s < z.a_out:
            return False
    for b in world.agents:
        if b.role != "horizontal":
            continue
        z = imap.zone(b.path_id, a.path_id)
        if b.s >= z.a_out:
            continue
        if b.s >= z.a_in:
            return False
        dist = z.a_in - b.s
        if dist < b.speed ** 2 / (2.0 * b.params.b_comf) + 1.0:
            return False
        if dist <= b.speed * cfg.vertical_horizon + 5.0:
            aggressive_crosser = not a.internal.conservative
            if not (aggressive_crosser and b.internal.conservative):
                return False
    return True


def _ped_blocked(world: WorldState, i: int) -> bool:
    p = world.agents[i]
    cfg = world.cfg
    half = p.length / 2
    reach = cfg.ped_lookahead / 2
    cx = p.x + p.ux * (half + reach)
    cy = p.y + p.uy * (half + reach)
    hx = abs(p.ux) * reach + abs(p.uy) * half
    hy = abs(p.uy) * reach + abs(p.ux) * half
    for j, b in enumerate(world.agents):
        if j == i:
            continue
        if abs(b.x - cx) < b.hx + hx and abs(b.y - cy) < b.hy + hy:
            return True
    return False


def step_pedestrian(world: WorldState, i: int) -> AgentState:
    """Next state of pedestrian ``i`` (returned as a new AgentState)."""
    p = world.agents[i]
    if p.kind is not AgentKind.PEDESTRIAN:
        raise ValueError("step_pedestrian expects a pedestrian")
    q = p.copy()
    if _ped_blocked(world, i):
        q.speed = 0.0
    else:
        q.speed = world.cfg.v_ped
        q.s = p.s + world.cfg.v_ped * world.dt
    q.place(world.map.path(q.path_id))
    return q


def footprint_overlaps(world: WorldState, ego_only: bool = False) -> list[tuple[int, int]]:
    """Index pairs of agents whose footprints overlap with positive area."""
    agents = world.agents
    out = []
    ego = world.ego
    start = 0
    if ego is not None:
        start = 1
        for j in range(1, len(agents)):
            b = agents[j]
            if abs(b.x - ego.x) >= b.hx + ego.hx or abs(b.y - ego.y) >= b.hy + ego.hy:
                continue
            if bool(rects_overlap(np.array([ego.x, ego.y]), np.array([ego.ux, ego.uy]),
                                  ego.length / 2, ego.width / 2,
                                  np.array([b.x, b.y]), np.array([b.ux, b.uy]),
                                  b.length / 2, b.width / 2)):
                out.append((0, j))
    if ego_only:
        return out
    for i in range(start, len(agents)):
        a = agents[i]
        for j in range(i + 1, len(agents)):
            b = agents[j]
            if abs(b.x - a.x) < b.hx + a.hx - 1e-9 and abs(b.y - a.y) < b.hy + a.hy - 1e-9:
                out.append((i, j))
    return out


def step_world(world: WorldState) -> WorldState:
    """Advance every agent by one tick (in place) and return the same world."""
    cfg = world.cfg
    imap = world.map
    dt = world.dt
    agents = world.agents
    new_speed = [0.0] * len(agents)
    for i, a in enumerate(agents):
        if a.kind is AgentKind.VEHICLE:
            if not a.departed and _vertical_may_depart(world, a):
                a.departed = True
            gap, dv = _scan(world, i)
            acc = idm_accel(a.speed, dv, gap, a.params)
            v = a.speed + acc * dt
            new_speed[i] = v if v > 0.0 else 0.0
        elif a.kind is AgentKind.EGO:
            v = a.speed + world.ego_command * dt
            new_speed[i] = v if v > 0.0 else 0.0

    for i, a in enumerate(agents):
        if a.kind is not AgentKind.PEDESTRIAN:
            a.speed = new_speed[i]
            a.s += new_speed[i] * dt
            a.place(imap.path(a.path_id))
    # pedestrians move one at a time against the latest positions, so two of
    # them can never step into each other in the same tick
    for i, a in enumerate(agents):
        if a.kind is AgentKind.PEDESTRIAN:
            q = step_pedestrian(world, i)
            a.speed, a.s, a.x, a.y = q.speed, q.s, q.x, q.y
    survivors = [a for a in agents
                 if a.kind is AgentKind.EGO or a.s <= imap.path(a.path_id).length]
    world.agents = survivors
    world.tick += 1
    ego = world.ego
    if ego is not None and not world.ego_completed:
        z = imap.zone("ego", "south")
        if z is not None and ego.s >= z.a_out:
            world.ego_completed = True

    if cfg.record_overlaps:
        for i, j in footprint_overlaps(world):
            world.overlaps.append((world.tick, agents_id(world, i), agents_id(world, j)))

    _spawn(world)
    return world


def agents_id(world: WorldState, i: int) -> int:
    return world.agents[i].id


def _spawn(world: WorldState) -> None:
    cfg = world.cfg
    imap = world.map
    rng = world.rng
    for lane in ("east", "west"):
        if world.tick < world.next_spawn[lane]:
            continue
        if _count(world, AgentKind.VEHICLE) >= cfg.max_vehicles:
            world.next_spawn[lane] = world.tick + 10
            continue
        s_new = cfg.vehicle_length / 2
        nearest = min((b.s for b in world.agents if b.path_id == lane), default=math.inf)
        gap = nearest - s_new - cfg.vehicle_length
        st = sample_internal_state(rng, cfg.p_aggressive)
        params: DriverParams = sample_driver_params(st, rng, cfg.sigma_v)
        path = imap.lanes[lane].path
        x, y = path.point_at(s_new)
        if gap < params.s0 + params.T_gap * params.v_star or not _clear(
                world, x, y, cfg.vehicle_length / 2 + 1.0, cfg.vehicle_width / 2 + 0.5):
            world.next_spawn[lane] = world.tick + 10
            continue
        world.agents.append(_new_agent(world, AgentKind.VEHICLE, lane, s_new, params.v_star,
                                       "horizontal", st, params))
        world.next_spawn[lane] = world.tick + _headway_ticks(world)
    if cfg.pedestrians and _count(world, AgentKind.PEDESTRIAN) < cfg.max_pedestrians:
        if rng.random() < cfg.ped_spawn_prob:
            _spawn_pedestrian(world, 0.25)


def trace_records(world: WorldState) -> list[dict]:
    """One flat record per agent for line-delimited episode traces."""
    out = []
    for a in world.agents:
        vx, vy = a.velocity
        out.append({
            "tick": world.tick, "id": a.id, "kind": a.kind.value,
            "x": round(a.x, 6), "y": round(a.y, 6), "vx": round(vx, 6), "vy": round(vy, 6),
            "trait": a.internal.trait.value if a.internal else None,
            "intention": a.internal.intention.value if a.internal else None,
        })
    return out


def is_conservative(a: AgentState) -> bool:
    return a.internal is not None and a.internal.trait is Trait.CONSERVATIVE
