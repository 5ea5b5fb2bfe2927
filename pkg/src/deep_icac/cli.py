"""Command-line entry point: train, eval, bench, dump-map."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .harness import TrainingAborted, bench_update_costs, build_agent, evaluate, make_run_env, run_training, summarize


def _train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {"master_seed": args.seed}
    if args.episodes:
        changes["episodes"] = args.episodes
    cfg = cfg.with_run(**changes)

    def progress(episode, res):
        print(f"episode {episode}: eval mean_return={res.mean_return:.3f} success={res.success_rate:.2f}", flush=True)

    try:
        log = run_training(cfg, out_dir=args.out, progress=progress)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    s = summarize(log)
    print(f"learning_speed={s['learning_speed']:.4f} final_performance={s['final_performance']:.4f} ({log.wall_seconds:.0f}s)")
    return 0


def _eval(args) -> int:
    ckpt = Path(args.ckpt)
    cfg_path = Path(args.config) if args.config else ckpt.with_name("config.ini")
    if not cfg_path.exists():
        print(f"error: no config at {cfg_path}; pass --config", file=sys.stderr)
        return 2
    cfg = load_config(cfg_path)
    env = make_run_env(cfg)
    agent = build_agent(cfg, env, 0)
    agent.load(ckpt)
    if args.dump_frames:
        Path(args.dump_frames).mkdir(parents=True, exist_ok=True)
    res = evaluate(agent, env, args.episodes, cfg.run.reward_mode, dump_dir=args.dump_frames)
    print(json.dumps({"mean_return": res.mean_return, "success_rate": res.success_rate}))
    return 0


def _bench(args) -> int:
    sizes = [int(x) for x in args.sizes.split(",")]
    out = bench_update_costs(sizes, repeats=args.repeats)
    print(f"actor parameters: cacla={out['params']['cacla_actor']} ddpg={out['params']['ddpg_actor']}")
    print(f"{'n':>5} {'cacla ms':>10} {'ddpg ms':>10} {'cacla x/2n':>11} {'ddpg x/2n':>10}")
    for row in out["rows"]:
        rc = row.get("cacla_ratio_per_doubling")
        rd = row.get("ddpg_ratio_per_doubling")
        print(
            f"{row['n']:>5} {1e3 * row['cacla_actor_s']:>10.3f} {1e3 * row['ddpg_actor_s']:>10.3f}"
            f" {'' if rc is None else f'{rc:.2f}':>11} {'' if rd is None else f'{rd:.2f}':>10}"
        )
    return 0


def _dump_map(args) -> int:
    path = Path(args.run) / "itm_map.json" if args.run else Path(args.map)
    if not path.exists():
        print(f"error: {path} not found (only deep_icac runs write a map)", file=sys.stderr)
        return 2
    snap = json.loads(path.read_text())
    print(f"e_max={snap['e_max']:.4f} nodes={len(snap['nodes'])} edges={len(snap['edges'])}")
    for node in snap["nodes"]:
        err = "-" if node["mean_error"] is None else f"{node['mean_error']:.4f}"
        print(f"node {node['id']:>3}: neighbors={node['neighbors']} errors={node['n_errors']} mean_error={err} lp={node['lp']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deep-icac")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training experiment")
    p.add_argument("--config", help="key=value config file (defaults if omitted)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, help="override run.episodes")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="greedy evaluation of a saved agent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--config", help="defaults to config.ini next to the checkpoint")
    p.add_argument("--dump-frames", help="write every eval frame as P6 images into this directory")
    p.set_defaults(func=_eval)

    p = sub.add_parser("bench", help="time actor updates against minibatch size")
    p.add_argument("--sizes", default="8,32,128")
    p.add_argument("--repeats", type=int, default=30)
    p.set_defaults(func=_bench)

    p = sub.add_parser("dump-map", help="print the ITM snapshot of a deep_icac run")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", help="run output directory")
    group.add_argument("--map", help="path to an itm_map.json file")
    p.set_defaults(func=_dump_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
