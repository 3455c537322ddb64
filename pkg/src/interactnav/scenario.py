"""Intersection geometry: reference paths, Frenet projection, conflicts, crosswalks.

All distances are metres. The default map is a four-way intersection with one
lane per direction; the horizontal road is uncontrolled and the vertical road
carries two-way stop signs. The ego vehicle starts northbound on the southern
stop-sign branch and turns left onto the westbound lane.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

CONFLICT_TOL = 0.1
CLUSTER_GAP = 1.0


class InvalidPathError(ValueError):
    pass


class RefPath:
    """Polyline reference path with linear interpolation in arclength."""

    __slots__ = ("name", "waypoints", "cumulative_arclength", "length",
                 "_xs", "_ys", "_cum", "_ux", "_uy")

    def __init__(self, waypoints, name: str = ""):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise InvalidPathError(f"path {name!r} needs >= 2 two-dimensional waypoints")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-12) or not np.all(np.isfinite(seg_len)):
            raise InvalidPathError(f"path {name!r} has degenerate segments")
        self.name = name
        self.waypoints = pts
        self.cumulative_arclength = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cumulative_arclength[-1])
        self._xs = pts[:, 0].tolist()
        self._ys = pts[:, 1].tolist()
        self._cum = self.cumulative_arclength.tolist()
        self._ux = (seg[:, 0] / seg_len).tolist()
        self._uy = (seg[:, 1] / seg_len).tolist()

    def __repr__(self):
        return f"RefPath({self.name!r}, n={len(self._xs)}, length={self.length:.2f})"

    def _segment(self, s: float) -> int:
        k = bisect.bisect_right(self._cum, s) - 1
        return min(max(k, 0), len(self._ux) - 1)

    def point_at(self, s: float) -> tuple[float, float]:
        """Position at arclength ``s``; extrapolates linearly past either end."""
        k = self._segment(s)
        ds = s - self._cum[k]
        return self._xs[k] + ds * self._ux[k], self._ys[k] + ds * self._uy[k]

    def heading_at(self, s: float) -> tuple[float, float]:
        k = self._segment(s)
        return self._ux[k], self._uy[k]

    def reconstruct(self, s: float, d: float) -> tuple[float, float]:
        x, y = self.point_at(s)
        ux, uy = self.heading_at(s)
        return x - d * uy, y + d * ux

    @property
    def is_straight(self) -> bool:
        return len(self._ux) == 1


def frenet_project(path: RefPath, point) -> tuple[float, float]:
    """Project ``point`` onto ``path``.

    Returns ``(s, d)``: arclength of the closest path point and the signed
    lateral offset, positive to the left of the direction of travel.
    """
    if not isinstance(path, RefPath):
        raise InvalidPathError("frenet_project needs a RefPath")
    p = np.asarray(point, dtype=float)
    a = path.waypoints[:-1]
    seg = path.waypoints[1:] - a
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    rel = p - a
    t = np.clip(np.einsum("ij,ij->i", rel, seg) / seg_len2, 0.0, 1.0)
    foot = a + t[:, None] * seg
    dist = np.hypot(p[0] - foot[:, 0], p[1] - foot[:, 1])
    k = int(np.argmin(dist))
    s = path.cumulative_arclength[k] + t[k] * math.sqrt(seg_len2[k])
    cross = seg[k, 0] * rel[k, 1] - seg[k, 1] * rel[k, 0]
    d = math.copysign(dist[k], cross) if dist[k] > 0 else 0.0
    return float(s), float(d)


def point_to_path_distance(path: RefPath, points: np.ndarray) -> np.ndarray:
    """Unsigned distance from each row of ``points`` to the polyline."""
    a = path.waypoints[:-1]
    seg = path.waypoints[1:] - a
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pij,ij->pi", rel, seg) / seg_len2, 0.0, 1.0)
    diff = rel - t[..., None] * seg[None]
    return np.sqrt(np.min(np.einsum("pij,pij->pi", diff, diff), axis=1))


@dataclass(frozen=True)
class Crosswalk:
    name: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    @property
    def horizontal(self) -> bool:
        """True when pedestrians walk along x (the crosswalk spans the vertical road)."""
        return (self.xmax - self.xmin) > (self.ymax - self.ymin)


@dataclass(frozen=True)
class ConflictPoint:
    path_a: str
    path_b: str
    s_a: float
    s_b: float


@dataclass(frozen=True)
class ConflictZone:
    """Arclength intervals (vehicle centres) on two paths whose occupants may touch."""

    path_a: str
    path_b: str
    a_in: float
    a_out: float
    b_in: float
    b_out: float
    merge: bool = False


@dataclass(frozen=True)
class Lane:
    name: str
    tag: str
    path: RefPath


def crosswalk_conflict(path: RefPath, crosswalk: Crosswalk) -> Optional[float]:
    """First arclength at which ``path`` enters the crosswalk rectangle, or None."""
    for k in range(len(path._ux)):
        x0, y0 = path._xs[k], path._ys[k]
        x1, y1 = path._xs[k + 1], path._ys[k + 1]
        dx, dy = x1 - x0, y1 - y0
        t0, t1 = 0.0, 1.0
        ok = True
        # Liang-Barsky clipping against the rectangle
        for p, q in ((-dx, x0 - crosswalk.xmin), (dx, crosswalk.xmax - x0),
                     (-dy, y0 - crosswalk.ymin), (dy, crosswalk.ymax - y0)):
            if p == 0.0:
                if q < 0.0:
                    ok = False
                    break
                continue
            r = q / p
            if p < 0.0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1:
                ok = False
                break
        if ok:
            return path._cum[k] + t0 * (path._cum[k + 1] - path._cum[k])
    return None


def _segment_hits(pa: RefPath, pb: RefPath) -> list[tuple[float, float, float, float]]:
    hits = []
    A0 = pa.waypoints[:-1]
    A1 = pa.waypoints[1:]
    B0 = pb.waypoints[:-1]
    B1 = pb.waypoints[1:]
    da = A1 - A0
    db = B1 - B0
    # bounding-box prefilter over all segment pairs
    amin = np.minimum(A0, A1) - 1e-9
    amax = np.maximum(A0, A1) + 1e-9
    bmin = np.minimum(B0, B1)
    bmax = np.maximum(B0, B1)
    overlap = ((amin[:, None, 0] <= bmax[None, :, 0]) & (bmin[None, :, 0] <= amax[:, None, 0])
               & (amin[:, None, 1] <= bmax[None, :, 1]) & (bmin[None, :, 1] <= amax[:, None, 1]))
    for i, j in zip(*np.nonzero(overlap)):
        r = da[i]
        q = db[j]
        w = B0[j] - A0[i]
        denom = r[0] * q[1] - r[1] * q[0]
        la = math.hypot(*r)
        lb = math.hypot(*q)
        if abs(denom) < 1e-12 * la * lb:
            # parallel: only collinear overlap counts
            if abs(w[0] * r[1] - w[1] * r[0]) > 1e-9 * la:
                continue
            rr = float(r @ r)
            t0 = float(w @ r) / rr
            t1 = float((w + q) @ r) / rr
            lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
            if lo > hi + 1e-12:
                continue
            qq = float(q @ q)
            u_lo = float((A0[i] + lo * r - B0[j]) @ q) / qq
            u_hi = float((A0[i] + hi * r - B0[j]) @ q) / qq
            u_lo, u_hi = sorted((min(max(u_lo, 0.0), 1.0), min(max(u_hi, 0.0), 1.0)))
            hits.append((pa._cum[i] + lo * la, pa._cum[i] + hi * la,
                         pb._cum[j] + u_lo * lb, pb._cum[j] + u_hi * lb))
            continue
        t = (w[0] * q[1] - w[1] * q[0]) / denom
        u = (w[0] * r[1] - w[1] * r[0]) / denom
        if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
            t = min(max(t, 0.0), 1.0)
            u = min(max(u, 0.0), 1.0)
            sa, sb = pa._cum[i] + t * la, pb._cum[j] + u * lb
            hits.append((sa, sa, sb, sb))
    return hits


def _cluster(hits: list[tuple[float, float, float, float]]) -> list[tuple[float, float]]:
    """Merge hit intervals ``(a_lo, a_hi, b_lo, b_hi)`` closer than CLUSTER_GAP on both paths."""
    if not hits:
        return []
    hits = sorted(hits)
    groups = [list(hits[0])]
    for a_lo, a_hi, b_lo, b_hi in hits[1:]:
        g = groups[-1]
        b_gap = max(b_lo - g[3], g[2] - b_hi, 0.0)
        if a_lo - g[1] > CLUSTER_GAP or b_gap > CLUSTER_GAP:
            groups.append([a_lo, a_hi, b_lo, b_hi])
        else:
            g[1] = max(g[1], a_hi)
            g[2] = min(g[2], b_lo)
            g[3] = max(g[3], b_hi)
    return [(g[0], g[2]) for g in groups]


def path_conflicts(name_a: str, pa: RefPath, name_b: str, pb: RefPath) -> list[ConflictPoint]:
    if name_b < name_a:
        name_a, pa, name_b, pb = name_b, pb, name_a, pa
    return [ConflictPoint(name_a, name_b, float(sa), float(sb)) for sa, sb in _cluster(_segment_hits(pa, pb))]


def _sample_poses(path: RefPath, step: float):
    samples = np.arange(0.0, path.length + step / 2, step)
    pts = np.array([path.point_at(v) for v in samples])
    heads = np.array([path.heading_at(v) for v in samples])
    return samples, pts, heads


def rects_overlap(c1, u1, hl1, hw1, c2, u2, hl2, hw2) -> np.ndarray:
    """Separating-axis test between oriented rectangles, broadcasting over leading axes.

    ``c`` are centres (..., 2), ``u`` unit headings (..., 2), ``hl``/``hw`` half
    length and half width. Touching rectangles do not count as overlapping.
    """
    n1 = np.stack([-u1[..., 1], u1[..., 0]], axis=-1)
    n2 = np.stack([-u2[..., 1], u2[..., 0]], axis=-1)
    d = c2 - c1
    sep = np.zeros(np.broadcast_shapes(d.shape[:-1], u1.shape[:-1], u2.shape[:-1]), dtype=bool)
    for ax, own in ((u1, hl1), (n1, hw1), (u2, hl2), (n2, hw2)):
        r1 = hl1 * np.abs(np.sum(u1 * ax, -1)) + hw1 * np.abs(np.sum(n1 * ax, -1))
        r2 = hl2 * np.abs(np.sum(u2 * ax, -1)) + hw2 * np.abs(np.sum(n2 * ax, -1))
        sep |= np.abs(np.sum(d * ax, -1)) >= r1 + r2
    return ~sep


def conflict_zone(pa: RefPath, pb: RefPath, cp: ConflictPoint, half_length: float,
                  half_width: float, step: float = 0.2) -> ConflictZone:
    """Centre-arclength interval on each path, around the conflict, where two
    vehicle footprints (one per path) can overlap."""
    sa, ca, ua = _sample_poses(pa, step)
    sb, cb, ub = _sample_poses(pb, step)
    hit = rects_overlap(ca[:, None], ua[:, None], half_length, half_width,
                        cb[None, :], ub[None, :], half_length, half_width)
    out = []
    for samples, inside, s0 in ((sa, hit.any(axis=1), cp.s_a), (sb, hit.any(axis=0), cp.s_b)):
        k = int(np.argmin(np.abs(samples - s0)))
        lo = hi = k
        while lo > 0 and inside[lo - 1]:
            lo -= 1
        while hi < len(samples) - 1 and inside[hi + 1]:
            hi += 1
        out.append((float(samples[lo]), float(samples[hi])))
    (a_in, a_out), (b_in, b_out) = out
    merge = a_out >= pa.length - step or b_out >= pb.length - step or a_in <= 0.0 or b_in <= 0.0
    return ConflictZone(cp.path_a, cp.path_b, a_in, a_out, b_in, b_out, merge)


def default_map_config() -> dict:
    """Plain-data description of the built-in map (JSON-serialisable)."""
    w = 3.7
    h = w / 2
    box = w
    cw = 3.0
    ex, ey = 45.0, 25.0
    return {
        "lane_width": w,
        "vehicle_length": 4.8,
        "vehicle_width": 1.8,
        "zone_clearance_margin": 0.3,
        "stop_line_offset": 0.0,
        "lanes": [
            {"name": "east", "tag": "horizontal-east", "waypoints": [[-ex, -h], [ex, -h]]},
            {"name": "west", "tag": "horizontal-west", "waypoints": [[ex, h], [-ex, h]]},
            {"name": "north", "tag": "vertical-north", "waypoints": [[h, -ey], [h, ey]]},
            {"name": "south", "tag": "vertical-south", "waypoints": [[-h, ey], [-h, -ey]]},
        ],
        "crosswalks": [
            {"name": "cw_west", "rect": [-box - cw, -box, -box, box]},
            {"name": "cw_east", "rect": [box, -box, box + cw, box]},
            {"name": "cw_south", "rect": [-box, -box - cw, box, -box]},
            {"name": "cw_north", "rect": [-box, box, box, box + cw]},
        ],
        "pedestrian_lane_offset": 0.75,
        "sidewalk_extension": 4.0,
        "ego_turn": {
            "start": [h, -ey],
            "center": [-box, -box],
            "radius": box + h,
            "exit_x": -20.0,
            "arc_step": 0.5,
        },
    }


def _ego_turn_waypoints(spec: dict) -> list[tuple[float, float]]:
    cx, cy = spec["center"]
    r = spec["radius"]
    sx, sy = spec["start"]
    pts = [(sx, sy)]
    n = max(2, math.ceil(r * math.pi / 2 / spec["arc_step"]))
    for k in range(n + 1):
        th = (math.pi / 2) * k / n
        pts.append((cx + r * math.cos(th), cy + r * math.sin(th)))
    pts.append((spec["exit_x"], cy + r))
    return pts


@dataclass
class IntersectionMap:
    lanes: dict
    crosswalks: list
    ego_turn_path: RefPath
    ped_paths: dict
    stop_lines: dict
    config: dict
    lane_crosswalks: dict = field(default_factory=dict)
    ped_bands: dict = field(default_factory=dict)
    conflicts: list = field(default_factory=list)
    zones: dict = field(default_factory=dict)

    def path(self, name: str) -> RefPath:
        if name == "ego":
            return self.ego_turn_path
        if name in self.lanes:
            return self.lanes[name].path
        return self.ped_paths[name]

    @property
    def vehicle_paths(self) -> dict:
        out = {k: v.path for k, v in self.lanes.items()}
        out["ego"] = self.ego_turn_path
        return out

    def zone(self, a: str, b: str) -> Optional[ConflictZone]:
        """Zone between paths ``a`` and ``b`` oriented so that ``path_a == a``."""
        z = self.zones.get((a, b))
        if z is not None:
            return z
        z = self.zones.get((b, a))
        if z is None:
            return None
        return ConflictZone(a, b, z.b_in, z.b_out, z.a_in, z.a_out, z.merge)


def find_conflicts(m: IntersectionMap) -> list[ConflictPoint]:
    names = sorted(m.vehicle_paths)
    paths = m.vehicle_paths
    out = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            out.extend(path_conflicts(a, paths[a], b, paths[b]))
    return out


def build_map(cfg: dict) -> IntersectionMap:
    lanes = {}
    for spec in cfg["lanes"]:
        lanes[spec["name"]] = Lane(spec["name"], spec["tag"], RefPath(spec["waypoints"], spec["name"]))
    crosswalks = [Crosswalk(c["name"], *map(float, c["rect"])) for c in cfg["crosswalks"]]
    ego = RefPath(_ego_turn_waypoints(cfg["ego_turn"]), "ego")

    off = cfg["pedestrian_lane_offset"]
    ext = cfg["sidewalk_extension"]
    ped_paths = {}
    for c in crosswalks:
        if c.horizontal:
            # crosses the vertical road: walk along x
            yc = (c.ymin + c.ymax) / 2
            ped_paths[f"{c.name}_a"] = RefPath([[c.xmin - ext, yc - off], [c.xmax + ext, yc - off]], f"{c.name}_a")
            ped_paths[f"{c.name}_b"] = RefPath([[c.xmax + ext, yc + off], [c.xmin - ext, yc + off]], f"{c.name}_b")
        else:
            xc = (c.xmin + c.xmax) / 2
            ped_paths[f"{c.name}_a"] = RefPath([[xc + off, c.ymin - ext], [xc + off, c.ymax + ext]], f"{c.name}_a")
            ped_paths[f"{c.name}_b"] = RefPath([[xc - off, c.ymax + ext], [xc - off, c.ymin - ext]], f"{c.name}_b")

    m = IntersectionMap(lanes=lanes, crosswalks=crosswalks, ego_turn_path=ego,
                        ped_paths=ped_paths, stop_lines={}, config=cfg)

    vl, vw = cfg["vehicle_length"], cfg["vehicle_width"]
    band_half = vw / 2 + 0.25 + 0.35
    for name, path in m.vehicle_paths.items():
        entries = []
        for ci, c in enumerate(crosswalks):
            s_in = crosswalk_conflict(path, c)
            if s_in is None:
                continue
            rev = RefPath(path.waypoints[::-1])
            s_out = path.length - crosswalk_conflict(rev, c)
            entries.append((ci, s_in, s_out))
        entries.sort(key=lambda e: e[1])
        m.lane_crosswalks[name] = entries
        if entries:
            m.stop_lines[name] = entries[0][1] - cfg["stop_line_offset"]
        # pedestrian bands: interval along each crossing pedestrian path near this lane
        for pname, ppath in ped_paths.items():
            samples = np.arange(0.0, ppath.length + 0.025, 0.05)
            pts = np.array([ppath.point_at(s) for s in samples])
            inside = point_to_path_distance(path, pts) < band_half
            if not inside.any():
                continue
            idx = np.nonzero(inside)[0]
            cw_idx = [ci for ci, c in enumerate(crosswalks) if pname.startswith(c.name + "_")][0]
            m.ped_bands[(name, pname)] = (cw_idx, float(samples[idx[0]]), float(samples[idx[-1]]))

    m.conflicts = find_conflicts(m)
    paths = m.vehicle_paths
    margin = cfg["zone_clearance_margin"]
    for cp in m.conflicts:
        z = conflict_zone(paths[cp.path_a], paths[cp.path_b], cp, vl / 2 + margin, vw / 2 + margin)
        m.zones[(cp.path_a, cp.path_b)] = z
    return m


_DEFAULT: Optional[IntersectionMap] = None


def default_map() -> IntersectionMap:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = build_map(default_map_config())
    return _DEFAULT


def load_map(path) -> IntersectionMap:
    with open(Path(path)) as fh:
        return build_map(json.load(fh))
