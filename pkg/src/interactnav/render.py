"""Static scene frames (SVG) and report charts (PNG)."""

from __future__ import annotations

import io
import os
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Polygon, Rectangle  # noqa: E402

from .learn.params import atomic_write_bytes  # noqa: E402
from .sim.drivers import Trait  # noqa: E402
from .sim.world import AgentKind, WorldState  # noqa: E402

COLORS = {"ego": "#1f4fd1", Trait.AGGRESSIVE: "#d62728", Trait.CONSERVATIVE: "#2ca02c", "ped": "#7f7f7f"}
VIEW = (-30.0, 30.0, -26.0, 26.0)


def _rc():
    return {"svg.fonttype": "none", "svg.hashsalt": "interactnav", "font.family": "DejaVu Sans"}


def annotation(p_conservative: Optional[float], score: Optional[float]) -> str:
    """Label text for a vehicle: belief then interactivity, e.g. ``0.97 | 12.3``."""
    left = "-" if p_conservative is None else f"{p_conservative:.2f}"
    right = "-" if score is None else f"{score:.1f}"
    return f"{left} | {right}"


def _draw_map(ax, imap) -> None:
    w = imap.config["lane_width"]
    for lane in imap.lanes.values():
        (x0, y0), (x1, y1) = lane.path.waypoints[0], lane.path.waypoints[-1]
        if abs(y1 - y0) < 1e-9:
            ax.add_patch(Rectangle((min(x0, x1), y0 - w / 2), abs(x1 - x0), w, color="#d9d9d9", lw=0, zorder=0))
        else:
            ax.add_patch(Rectangle((x0 - w / 2, min(y0, y1)), w, abs(y1 - y0), color="#d9d9d9", lw=0, zorder=0))
    for c in imap.crosswalks:
        ax.add_patch(Rectangle((c.xmin, c.ymin), c.xmax - c.xmin, c.ymax - c.ymin, fill=False,
                               hatch="///", ec="#a0a0a0", lw=0.5, zorder=1))
    ego = imap.ego_turn_path.waypoints
    ax.plot([p[0] for p in ego], [p[1] for p in ego], ls="--", lw=0.6, color=COLORS["ego"], zorder=1)


def _footprint(a):
    hl, hw = a.length / 2, a.width / 2
    ux, uy = a.ux, a.uy
    px, py = -uy, ux
    return [(a.x + sx * hl * ux + sy * hw * px, a.y + sx * hl * uy + sy * hw * py)
            for sx, sy in ((1, 1), (1, -1), (-1, -1), (-1, 1))]


def figure_for(world: WorldState, beliefs: Optional[Mapping[int, float]] = None,
               scores: Optional[Mapping[int, float]] = None):
    beliefs = beliefs or {}
    scores = scores or {}
    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    ax.set_xlim(VIEW[0], VIEW[1])
    ax.set_ylim(VIEW[2], VIEW[3])
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    _draw_map(ax, world.map)
    for a in world.agents:
        if a.kind is AgentKind.PEDESTRIAN:
            ax.add_patch(Circle((a.x, a.y), a.width / 2, color=COLORS["ped"], zorder=3))
            continue
        color = COLORS["ego"] if a.kind is AgentKind.EGO else COLORS[a.internal.trait]
        ax.add_patch(Polygon(_footprint(a), closed=True, color=color, zorder=3))
        if a.kind is AgentKind.VEHICLE:
            ax.text(a.x + 1.5, a.y + 1.5, annotation(beliefs.get(a.id), scores.get(a.id)),
                    fontsize=7, zorder=4)
    ax.set_title(f"tick {world.tick}", fontsize=9)
    fig.tight_layout()
    return fig


def frame_svg(world: WorldState, beliefs=None, scores=None) -> bytes:
    with plt.rc_context(_rc()):
        fig = figure_for(world, beliefs, scores)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def render_frame(world: WorldState, beliefs=None, scores=None, path=None) -> bytes:
    """Draw one snapshot; vehicles are coloured by their hidden trait and
    labelled with the belief that they are conservative and their interactivity."""
    data = frame_svg(world, beliefs, scores)
    if path is not None:
        d = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(d) or not os.access(d, os.W_OK):
            raise OSError(f"cannot write to {path!r}")
        atomic_write_bytes(path, data)
    return data


def outcome_chart(labels: Sequence[str], rates: Sequence[Sequence[float]], path, title: str = "") -> None:
    """Stacked completion/collision/timeout bars, one per label."""
    with plt.rc_context({"svg.hashsalt": "interactnav"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels) + 1.5), 3.4))
        bottom = [0.0] * len(labels)
        for k, (name, color) in enumerate((("completion", "#2ca02c"), ("collision", "#d62728"),
                                           ("timeout", "#ff7f0e"))):
            vals = [r[k] for r in rates]
            ax.bar(labels, vals, bottom=bottom, color=color, label=name)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylim(0, 1)
        ax.set_ylabel("fraction of episodes")
        ax.set_title(title, fontsize=9)
        ax.legend(fontsize=7, loc="upper right")
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="png", metadata={"Software": None})
        plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
