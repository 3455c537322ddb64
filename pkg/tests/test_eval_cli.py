import csv
import io
import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from interactnav import cli
from interactnav.env import Outcome
from interactnav.experiments import ExperimentSpec, run_experiment, run_suite, suite_specs
from interactnav.metrics import EmptyRecordsError, compute_metrics, episode_rows, to_csv
from interactnav.render import annotation, render_frame
from interactnav.rl.agent import Agent, CheckpointMissingError, TrainConfig
from interactnav.rl.evaluate import TestRecord
from interactnav.sim import (AgentKind, DriverParams, InternalState, Intention, SimConfig, Trait, add_agent,
                             empty_world, reset_world, step_world)


def _rec(outcome, ticks=100, seed=0, hits=(0, 0, 0)):
    return TestRecord(seed, 0, outcome, ticks, 0.0, 0.1, [], *hits)


def test_metrics_examples():
    rep = compute_metrics([_rec(Outcome.COMPLETION)] * 4)
    assert (rep.completion, rep.collision, rep.timeout) == (1.0, 0.0, 0.0)
    assert rep.time_to_completion == pytest.approx(10.0)
    mixed = [_rec(Outcome.COMPLETION, 80), _rec(Outcome.COMPLETION, 120), _rec(Outcome.COLLISION, 30),
             _rec(Outcome.TIMEOUT, 250)]
    rep = compute_metrics(mixed)
    assert (rep.completion, rep.collision, rep.timeout) == (0.5, 0.25, 0.25)
    assert rep.time_to_completion == pytest.approx(10.0)  # completions only
    assert math.isclose(rep.completion + rep.collision + rep.timeout, 1.0, abs_tol=1e-9)
    oracle = compute_metrics([_rec(Outcome.TIMEOUT, hits=(7, 7, 7))])
    assert oracle.trait_accuracy == 1.0 and oracle.intention_accuracy == 1.0
    with pytest.raises(EmptyRecordsError):
        compute_metrics([])
    with pytest.raises(ValueError):
        compute_metrics([_rec(Outcome.RUNNING)])


def test_per_seed_breakdown_and_rows():
    recs = [_rec(Outcome.COMPLETION, seed=0), _rec(Outcome.COLLISION, seed=1)]
    rep = compute_metrics(recs, "d1")
    assert rep.per_seed == {0: (1.0, 0.0, 0.0), 1: (0.0, 1.0, 0.0)}
    rows = list(csv.DictReader(io.StringIO(to_csv(episode_rows(recs, "d1")))))
    assert [r["outcome"] for r in rows] == ["Completion", "Collision"]
    assert all(r["config_digest"] == "d1" for r in rows)


def test_annotation_and_svg(tmp_path):
    assert annotation(0.97, 12.3) == "0.97 | 12.3"
    w = empty_world()
    ET.fromstring(render_frame(w))  # map only
    v = add_agent(w, AgentKind.VEHICLE, "east", 10.0, 5.0, InternalState(Trait.CONSERVATIVE, Intention.YIELD),
                  DriverParams(9.0, 5.0))
    data = render_frame(w, {v.id: 0.97}, {v.id: 12.3}, tmp_path / "f.svg")
    root = ET.fromstring(data)
    texts = ["".join(t.itertext()) for t in root.iter() if t.tag.endswith("text")]
    assert "0.97 | 12.3" in texts
    assert (tmp_path / "f.svg").read_bytes() == data == render_frame(w, {v.id: 0.97}, {v.id: 12.3})
    with pytest.raises(OSError):
        render_frame(w, path=tmp_path / "missing" / "f.svg")


def test_frame_ticks_monotone():
    w = reset_world(SimConfig(), seed=0)
    ticks = []
    for _ in range(3):
        root = ET.fromstring(render_frame(w))
        t = [s for s in ("".join(e.itertext()) for e in root.iter() if e.tag.endswith("text")) if s.startswith("tick")]
        ticks.append(int(t[0].split()[1]))
        step_world(w)
    assert ticks == [0, 1, 2]


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    out = []
    for seed in (0, 1):
        cfg = TrainConfig.from_dict({"variant": "a", "hidden": 8, "seed": seed})
        d = root / f"a-s{seed}"
        Agent(cfg).save(d)
        out.append(str(d))
    return out


def test_experiment_rows_and_determinism(checkpoints, tmp_path):
    spec = ExperimentSpec("exp", checkpoints[:1], episodes=4)
    rep = run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b")
    rows = list(csv.DictReader(open(tmp_path / "a" / "exp_episodes.csv")))
    assert len(rows) == 4 and rep.episodes == 4
    for name in ("exp_episodes.csv", "exp_metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with pytest.raises(CheckpointMissingError):
        run_experiment(ExperimentSpec("x", [str(tmp_path)], episodes=1))
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec("x", checkpoints, p_aggressive=1.5, episodes=1))
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec("x", checkpoints, manipulation="sideways", episodes=1))


def test_suites(checkpoints, tmp_path):
    specs = suite_specs("distribution-shift", {"a": checkpoints}, 3)
    assert sorted(specs) == ["0.5", "0.7", "0.9"]
    assert [s.p_aggressive for s in specs.values()] == [0.5, 0.7, 0.9]
    assert sorted(suite_specs("manipulation", {"a": checkpoints}, 3)) == ["aggr-to-cons", "cons-to-aggr", "none"]
    assert sorted(suite_specs("pedestrians", {"a": checkpoints}, 3)) == ["off", "on"]
    with pytest.raises(ValueError):
        suite_specs("nope", {}, 1)
    reps = run_suite("variant", {"x": checkpoints[:1], "y": checkpoints[1:]}, 2, str(tmp_path), baseline="x")
    rows = list(csv.DictReader(open(tmp_path / "variant_report.csv")))
    assert [r["group"] for r in rows] == ["x", "y"] and set(reps) == {"x", "y"}
    assert (tmp_path / "variant_outcomes.png").stat().st_size > 0


def test_cli_usage_errors(capsys):
    for argv in (["bogus"], ["simulate", "--nope"], ["simulate", "--pedestrians", "maybe"]):
        with pytest.raises(SystemExit) as e:
            cli.main(argv)
        assert e.value.code == 2


def test_cli_runtime_error_exit_1(tmp_path, capsys):
    assert cli.main(["evaluate", "--checkpoint", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_simulate_deterministic(tmp_path, capsys):
    args = ["simulate", "--episodes", "5", "--seed", "7", "--no-ego", "--ticks", "40"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == ["simulate.csv"] + [f"trace_{k:04d}.jsonl" for k in range(5)]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    first = json.loads((tmp_path / "a" / "trace_0000.jsonl").read_text().splitlines()[0])
    assert first["kind"] != "EgoVehicle"


def test_cli_render_and_collect(tmp_path, capsys):
    assert cli.main(["render", "--ticks", "3", "--out", str(tmp_path / "r")]) == 0
    frames = sorted(os.listdir(tmp_path / "r"))
    assert frames == ["frame_0000.svg", "frame_0001.svg", "frame_0002.svg"]
    for f in frames:
        ET.parse(tmp_path / "r" / f)
    assert cli.main(["collect-noego", "--episodes", "2", "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c" / "noego.jsonl").read_text().splitlines()
    assert lines and all(json.loads(l)["kind"] in ("Vehicle", "Pedestrian") for l in lines[:50])


def test_cli_evaluate_and_experiment(checkpoints, tmp_path, capsys):
    ck = checkpoints[0]
    assert cli.main(["evaluate", "--checkpoint", ck, "--episodes", "3", "--out", str(tmp_path / "e")]) == 0
    assert cli.main(["experiment", "--suite", "distribution-shift", "--checkpoint", f"a={ck}",
                     "--episodes", "2", "--out", str(tmp_path / "x")]) == 0
    files = sorted(f for f in os.listdir(tmp_path / "x") if f.endswith("_metrics.csv"))
    assert files == ["shift-p0.5_metrics.csv", "shift-p0.7_metrics.csv", "shift-p0.9_metrics.csv"]
