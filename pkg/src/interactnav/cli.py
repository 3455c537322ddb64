"""Command-line driver: simulate, collect data, train, evaluate, run experiment suites, render."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

import numpy as np

from .env import EnvConfig, collect_noego_dataset
from .learn.params import atomic_write_text
from .metrics import compute_metrics, episode_rows, to_csv
from .sim import SimConfig, reset_world, step_world, trace_records


class UsageError(Exception):
    pass


def _load_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _digest(d: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def _train_config(args):
    from .rl.agent import TrainConfig

    d = _load_json(args.config)
    for key, attr in (("seed", "seed"), ("variant", "variant"), ("message_passing", "message_passing")):
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    if getattr(args, "tp", False):
        d["tp"] = True
    if getattr(args, "steps", None) is not None:
        d["total_steps"] = args.steps
    return TrainConfig.from_dict(d)


def _env_config(args) -> EnvConfig:
    from .env import reduced_config

    d = _load_json(args.config)
    cfg = EnvConfig.from_dict(d) if d else reduced_config()
    sim = cfg.sim
    if args.p_aggressive is not None:
        sim = dataclasses.replace(sim, p_aggressive=args.p_aggressive)
    if args.pedestrians is not None:
        sim = dataclasses.replace(sim, pedestrians=args.pedestrians)
    sim.validate()
    return dataclasses.replace(cfg, sim=sim)


# --------------------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    d = _load_json(args.config)
    sim = SimConfig.from_dict(d.get("sim", d))
    if args.no_ego:
        sim = dataclasses.replace(sim, ego=False)
    if args.p_aggressive is not None:
        sim = dataclasses.replace(sim, p_aggressive=args.p_aggressive)
    if args.pedestrians is not None:
        sim = dataclasses.replace(sim, pedestrians=args.pedestrians)
    sim.validate()
    digest = _digest(sim.to_dict())
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for ep in range(args.episodes):
        world = reset_world(sim, seed=args.seed, episode=ep)
        lines = [json.dumps(r, sort_keys=True) for r in trace_records(world)]
        for _ in range(args.ticks):
            step_world(world)
            lines.extend(json.dumps(r, sort_keys=True) for r in trace_records(world))
        atomic_write_text(os.path.join(args.out, f"trace_{ep:04d}.jsonl"), "\n".join(lines) + "\n")
        rows.append({"episode": ep, "ticks": world.tick, "agents_seen": world.next_id,
                     "overlaps": len(world.overlaps), "config_digest": digest})
    atomic_write_text(os.path.join(args.out, "simulate.csv"), to_csv(rows))
    print(f"wrote {args.episodes} traces to {args.out}")
    return 0


def cmd_collect_noego(args) -> int:
    from .rl.pretrain import noego_env_config

    cfg = noego_env_config(_env_config(args))
    data = collect_noego_dataset(cfg, [args.seed], args.episodes)
    os.makedirs(args.out, exist_ok=True)
    n = data.save_jsonl(os.path.join(args.out, "noego.jsonl"), cfg)
    print(f"{len(data)} snapshots, {n} history/future pairs")
    return 0


def cmd_pretrain(args) -> int:
    from .rl.pretrain import pretrain_noego

    tc = _train_config(args)
    res = pretrain_noego(tc.env_config, tc.message_passing, tc.seed, episodes=args.episodes,
                         hidden=tc.hidden, log=lambda r: print(json.dumps(r)))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"noego-{tc.message_passing}-s{tc.seed}.ckpt")
    res.predictor.store.save(path, res.predictor.enc_cfg.digest())
    atomic_write_text(os.path.join(args.out, "pretrain.csv"), to_csv(res.history))
    print(f"best held-out final-step error {res.best_ade:.4f} m -> {path}")
    return 0


def cmd_train(args) -> int:
    from .rl.runs import pretrained_path, train_run

    tc = _train_config(args)
    if tc.tp and not tc.pretrained:
        tc.pretrained = os.path.abspath(pretrained_path(args.out, tc))
    train_run(tc, args.out, lambda r: print(json.dumps(r, default=float)))
    return 0


def cmd_evaluate(args) -> int:
    from .experiments import ExperimentSpec, run_experiment

    spec = ExperimentSpec("evaluate", args.checkpoint, args.p_aggressive, args.pedestrians,
                          args.manipulate, args.episodes)
    rep = run_experiment(spec, args.out)
    print(json.dumps(rep.row()))
    return 0


def _groups(items) -> dict:
    groups: dict = {}
    for it in items:
        label, _, path = it.partition("=")
        if not path:
            label, path = os.path.basename(os.path.normpath(it)), it
        groups.setdefault(label, []).append(path)
    return groups


def cmd_experiment(args) -> int:
    from .experiments import run_suite

    overrides = {"p_aggressive": args.p_aggressive, "pedestrians": args.pedestrians,
                 "manipulation": args.manipulate}
    if args.suite == "distribution-shift":
        overrides.pop("p_aggressive")
    if args.suite == "pedestrians":
        overrides.pop("pedestrians")
    if args.suite == "manipulation":
        overrides.pop("manipulation")
    reports = run_suite(args.suite, _groups(args.checkpoint), args.episodes, args.out,
                        baseline=args.baseline, **overrides)
    for label, rep in reports.items():
        print(label, json.dumps(rep.row()))
    return 0


def cmd_render(args) -> int:
    from .render import render_frame

    os.makedirs(args.out, exist_ok=True)
    if args.checkpoint:
        from .rl.agent import Agent
        from .rl.evaluate import test_env_config
        from .env import IntersectionEnv
        from .learn import tape as T

        agent = Agent.load(args.checkpoint[0])
        env = IntersectionEnv(test_env_config(agent, args.p_aggressive, args.pedestrians))
        env.reset(args.seed, args.episode)
        rng = np.random.default_rng([args.seed, args.episode, 2])
        h = np.zeros((1, agent.cfg.hidden))
        c = np.zeros_like(h)
        nv = env.cfg.n_vehicles
        for t in range(args.ticks):
            w = env.window()
            f = agent.features(env.obs.feats[None], env.obs.mask[None], w.x[None], w.tmask[None], infer=True)
            ids = env.obs.ids
            beliefs = {int(ids[1 + k]): float(f.beliefs[0][0, k]) for k in range(nv)
                       if f.beliefs is not None and ids[1 + k] >= 0}
            scores = {int(ids[k]): float(f.w[0, k]) for k in range(1, len(ids))
                      if f.w is not None and ids[k] >= 0}
            render_frame(env.world, beliefs, scores, os.path.join(args.out, f"frame_{t:04d}.svg"))
            with T.no_grad():
                p, h2, c2 = agent.policy.distribution(T.Tensor(f.x), T.Tensor(h), T.Tensor(c))
            h, c = h2.data, c2.data
            a = int(min(np.searchsorted(np.cumsum(p[0]), rng.random(), side="right"), 2))
            env.step(a)
            if env.done:
                break
    else:
        sim = SimConfig.from_dict(_load_json(args.config).get("sim", {}))
        if args.no_ego:
            sim = dataclasses.replace(sim, ego=False)
        world = reset_world(sim, seed=args.seed, episode=args.episode)
        for t in range(args.ticks):
            render_frame(world, path=os.path.join(args.out, f"frame_{t:04d}.svg"))
            step_world(world)
    print(f"frames written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .rl.gradcheck import composite_gradcheck

    variants = [args.message_passing] if args.message_passing else ["gat", "gcn", "sage"]
    ok = True
    for mp in variants:
        rep = composite_gradcheck(mp, seed=args.seed or 0, max_entries=args.max_entries)
        for name, err in rep.errors.items():
            print(f"{mp}\t{name}\t{err:.3e}")
        print(f"{mp}\tmax\t{rep.max_error:.3e}\t{'ok' if rep.passed else 'FAIL'}")
        ok = ok and rep.passed
    return 0 if ok else 1


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interactnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, episodes=10, out="out"):
        sp.add_argument("--config", help="JSON config document")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--episodes", type=int, default=episodes)
        sp.add_argument("--variant", choices=["base", "a", "b", "c", "d", "e"])
        sp.add_argument("--message-passing", choices=["gat", "gcn", "sage"])
        sp.add_argument("--p-aggressive", type=float)
        sp.add_argument("--pedestrians", type=_on_off)
        sp.add_argument("--manipulate", choices=["none", "cons-to-aggr", "aggr-to-cons"], default="none")
        sp.add_argument("--out", default=out)
        return sp

    s = common(sub.add_parser("simulate", help="run the traffic simulator and write traces"))
    s.add_argument("--no-ego", action="store_true")
    s.add_argument("--ticks", type=int, default=250)
    s.set_defaults(fn=cmd_simulate)

    s = common(sub.add_parser("collect-noego", help="log history/future pairs without the ego"), 200)
    s.set_defaults(fn=cmd_collect_noego)

    s = common(sub.add_parser("pretrain-predictor", help="fit the without-ego predictor"), 200)
    s.set_defaults(fn=cmd_pretrain)

    s = common(sub.add_parser("train", help="train a controller"))
    s.add_argument("--tp", action="store_true", help="add the interactivity-weighted prediction task")
    s.add_argument("--steps", type=int, help="total environment steps")
    s.set_defaults(fn=cmd_train)

    s = common(sub.add_parser("evaluate", help="test trained checkpoints"), 100)
    s.add_argument("--checkpoint", nargs="+", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = common(sub.add_parser("experiment", help="run an experiment suite"), 100)
    s.add_argument("--suite", choices=["variant", "manipulation", "distribution-shift", "pedestrians"],
                   required=True)
    s.add_argument("--checkpoint", nargs="+", required=True, help="DIR or LABEL=DIR, repeatable")
    s.add_argument("--baseline", help="group whose time to completion is the ratio denominator")
    s.set_defaults(fn=cmd_experiment)

    s = common(sub.add_parser("render", help="write SVG frames of one episode"))
    s.add_argument("--checkpoint", nargs=1)
    s.add_argument("--episode", type=int, default=0)
    s.add_argument("--ticks", type=int, default=50)
    s.add_argument("--no-ego", action="store_true")
    s.set_defaults(fn=cmd_render)

    s = common(sub.add_parser("gradcheck", help="finite-difference check of the training losses"))
    s.add_argument("--max-entries", type=int, default=24)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    if args.seed is None and args.command not in ("train", "pretrain-predictor", "gradcheck"):
        args.seed = 0
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"interactnav {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
