"""Experiment specs and suites over trained checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .learn.params import atomic_write_text
from .metrics import MetricsReport, compute_metrics, episode_rows, to_csv
from .render import outcome_chart
from .rl.agent import Agent, CheckpointMissingError
from .rl.evaluate import run_test_episodes, test_env_config
from .rl.policy import Manipulation

SUITES = ("variant", "manipulation", "distribution-shift", "pedestrians")
TEST_SEED_OFFSET = 1000
REPORT_COLUMNS = ["experiment", "group", "episodes", "completion", "collision", "timeout",
                  "time_to_completion", "ttc_ratio", "trait_accuracy", "intention_accuracy", "config_digest"]


@dataclass
class ExperimentSpec:
    experiment_id: str
    checkpoints: list
    p_aggressive: Optional[float] = None
    pedestrians: Optional[bool] = None
    manipulation: str = "none"
    episodes: int = 1000
    batch: int = 16

    def validate(self) -> None:
        Manipulation(self.manipulation)
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        if self.p_aggressive is not None and not 0.0 <= self.p_aggressive <= 1.0:
            raise ValueError("p_aggressive must lie in [0, 1]")
        if not self.checkpoints:
            raise ValueError("no checkpoints given")
        for c in self.checkpoints:
            if not os.path.exists(os.path.join(c, "config.json")):
                raise CheckpointMissingError(f"no agent checkpoint in {c!r}")

    def digest(self) -> str:
        d = asdict(self)
        d["checkpoints"] = [_checkpoint_digest(c) for c in self.checkpoints]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _checkpoint_digest(path: str) -> str:
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        if name.endswith(".ckpt") or name == "config.json":
            with open(os.path.join(path, name), "rb") as fh:
                h.update(name.encode())
                h.update(fh.read())
    return h.hexdigest()[:16]


def evaluate_checkpoints(spec: ExperimentSpec, agents: Optional[dict] = None) -> list:
    """Test records for every checkpoint in ``spec``; each checkpoint uses its own test seed."""
    spec.validate()
    records = []
    for path in spec.checkpoints:
        agent = (agents or {}).get(path) or Agent.load(path)
        env_cfg = test_env_config(agent, spec.p_aggressive, spec.pedestrians)
        seed = TEST_SEED_OFFSET + agent.cfg.seed
        records.extend(run_test_episodes(agent, seed, spec.episodes, env_cfg, spec.manipulation,
                                         batch=spec.batch))
    return records


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str] = None,
                   agents: Optional[dict] = None) -> MetricsReport:
    """Evaluate ``spec`` and, given ``out_dir``, write per-episode and aggregate CSVs."""
    records = evaluate_checkpoints(spec, agents)
    digest = spec.digest()
    report = compute_metrics(records, digest)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        rows = episode_rows(records, digest, experiment=spec.experiment_id)
        atomic_write_text(os.path.join(out_dir, f"{spec.experiment_id}_episodes.csv"), to_csv(rows))
        agg = dict(report.row(), experiment=spec.experiment_id, group=spec.experiment_id,
                   ttc_ratio=float("nan"), config_digest=digest)
        atomic_write_text(os.path.join(out_dir, f"{spec.experiment_id}_metrics.csv"),
                          to_csv([agg], REPORT_COLUMNS))
    return report


def suite_specs(suite: str, groups: dict, episodes: int, p_aggressive: Optional[float] = None,
                pedestrians: Optional[bool] = None, manipulation: str = "none") -> dict:
    """Experiment specs for ``suite`` keyed by group label.

    ``groups`` maps a label (e.g. a variant name) to checkpoint directories.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    specs = {}
    if suite == "variant":
        for label, ckpts in groups.items():
            specs[label] = ExperimentSpec(f"variant-{label}", list(ckpts), p_aggressive, pedestrians,
                                          manipulation, episodes)
        return specs
    ckpts = [c for cs in groups.values() for c in cs]
    if suite == "manipulation":
        for mode in Manipulation:
            specs[mode.value] = ExperimentSpec(f"manipulation-{mode.value}", ckpts, p_aggressive,
                                               pedestrians, mode.value, episodes)
    elif suite == "distribution-shift":
        for p in (0.5, 0.7, 0.9):
            specs[f"{p:.1f}"] = ExperimentSpec(f"shift-p{p:.1f}", ckpts, p, pedestrians, manipulation, episodes)
    else:
        for flag in (True, False):
            label = "on" if flag else "off"
            specs[label] = ExperimentSpec(f"pedestrians-{label}", ckpts, p_aggressive, flag,
                                          manipulation, episodes)
    return specs


def run_suite(suite: str, groups: dict, episodes: int, out_dir: str, baseline: Optional[str] = None,
              **overrides) -> dict:
    """Run a suite; writes one metrics CSV per group, a combined report CSV and a PNG chart."""
    specs = suite_specs(suite, groups, episodes, **overrides)
    reports = {label: run_experiment(spec, out_dir) for label, spec in specs.items()}
    base_ttc = reports[baseline].time_to_completion if baseline in reports else float("nan")
    rows = []
    for label, rep in reports.items():
        rows.append(dict(rep.row(), experiment=suite, group=label, ttc_ratio=rep.time_to_completion / base_ttc,
                         config_digest=rep.config_digest))
    atomic_write_text(os.path.join(out_dir, f"{suite}_report.csv"), to_csv(rows, REPORT_COLUMNS))
    outcome_chart(list(reports), [(r.completion, r.collision, r.timeout) for r in reports.values()],
                  os.path.join(out_dir, f"{suite}_outcomes.png"), title=suite)
    return reports
