"""Episode outcome metrics and CSV rendering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .env import Outcome
from .rl.evaluate import TestRecord


class EmptyRecordsError(ValueError):
    pass


@dataclass
class MetricsReport:
    completion: float
    collision: float
    timeout: float
    time_to_completion: float
    trait_accuracy: float
    intention_accuracy: float
    episodes: int
    per_seed: dict = field(default_factory=dict)
    config_digest: str = ""

    def row(self) -> dict:
        return {
            "episodes": self.episodes, "completion": self.completion, "collision": self.collision,
            "timeout": self.timeout, "time_to_completion": self.time_to_completion,
            "trait_accuracy": self.trait_accuracy, "intention_accuracy": self.intention_accuracy,
        }


def _rates(records: Sequence[TestRecord]) -> tuple[float, float, float]:
    n = len(records)
    c = sum(r.outcome is Outcome.COMPLETION for r in records)
    k = sum(r.outcome is Outcome.COLLISION for r in records)
    t = sum(r.outcome is Outcome.TIMEOUT for r in records)
    if c + k + t != n:
        raise ValueError("records contain unfinished episodes")
    return c / n, k / n, t / n


def compute_metrics(records: Iterable[TestRecord], config_digest: str = "") -> MetricsReport:
    """Rates over episodes, time to completion over completed episodes only,
    and belief accuracy per vehicle-step."""
    records = list(records)
    if not records:
        raise EmptyRecordsError("no episode records")
    comp, coll, tout = _rates(records)
    ttc = [r.time_to_completion for r in records if r.outcome is Outcome.COMPLETION]
    steps = sum(r.vehicle_steps for r in records)
    trait = sum(r.trait_hits for r in records) / steps if steps else float("nan")
    intent = sum(r.intention_hits for r in records) / steps if steps else float("nan")
    per_seed = {}
    for s in sorted({r.seed for r in records}):
        per_seed[s] = _rates([r for r in records if r.seed == s])
    return MetricsReport(comp, coll, tout, float(np.mean(ttc)) if ttc else float("nan"), trait, intent,
                         len(records), per_seed, config_digest)


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6f}"
    return str(v)


def to_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def episode_rows(records: Sequence[TestRecord], digest: str, **extra) -> list[dict]:
    out = []
    for r in records:
        out.append(dict(extra, seed=r.seed, episode=r.episode, outcome=r.outcome.value, ticks=r.ticks,
                        ret=r.ret, time_to_completion=r.time_to_completion, trait_hits=r.trait_hits,
                        intention_hits=r.intention_hits, vehicle_steps=r.vehicle_steps,
                        config_digest=digest))
    return out
