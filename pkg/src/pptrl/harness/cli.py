"""Command-line entry point: ``pptrl <verb> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..envs import generate_maze
from .config import VARIANTS, ExperimentConfig, describe_defaults
from .train import evaluate, run_dir, run_matrix, train


def _base_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
        if args.task and args.task != config.task:
            raise SystemExit("--task contradicts the config file")
        if args.variant and args.variant != config.variant:
            config = config.with_variant(args.variant)
    else:
        config = ExperimentConfig.for_variant(args.task or "pushing", args.variant or "PPT")
    if args.out:
        config = config.replace(out_dir=args.out)
    return config


def _with_episodes(config: ExperimentConfig, episodes) -> ExperimentConfig:
    if episodes is None:
        return config
    return config.replace(ppo=replace(config.ppo, episodes=episodes), max_updates=None)


def cmd_train(args) -> int:
    config = _with_episodes(_base_config(args), args.episodes)
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    for seed in seeds:
        out = run_dir(config.out_dir, config, seed)
        log = print if args.verbose else None
        result = train(config, seed, out, log=log)
        m = result.manifest
        print(f"{out}: {m.updates} updates, eval success {m.eval_summary['success'][0]:.3f}")
    return 0


def cmd_eval(args) -> int:
    config = _base_config(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    source = args.checkpoint or run_dir(config.out_dir, config, seed)
    result = evaluate(config, source, seed=seed, episodes=args.episodes)
    text = json.dumps({"source": str(source), "seed": seed, "summary": result.summary}, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def cmd_matrix(args) -> int:
    base = _with_episodes(_base_config(args), args.episodes)
    if args.seed is not None:
        base = base.replace(seeds=tuple(range(args.seed, args.seed + args.n_seeds)))
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    configs = []
    for v in variants:
        c = base.with_variant(v)
        if not c.episodic or v in ("S", "ST"):
            # step-wise cells keep their own batch defaults
            d = ExperimentConfig.for_variant(base.task, v, task_config=base.task_config)
            c = c.replace(n_envs=d.n_envs, ppo=replace(d.ppo, episodes=base.ppo.episodes))
        configs.append(c)
    summary = run_matrix(configs, base.out_dir, log=print if args.verbose else None)
    for cell in summary["cells"]:
        print(f"{cell['variant']:>4} seed {cell['seed']}: {cell['status']}")
    return 0 if all(c["status"] == "ok" for c in summary["cells"]) else 1


def cmd_export_plots(args) -> int:
    """Collect the per-variant matrix curves into wide plot-data tables."""
    root = Path(args.out or "runs")
    curves = {p.stem[len("curves_"):]: p for p in sorted(root.glob("curves_*.csv"))}
    if not curves:
        print(f"no curves_*.csv under {root}", file=sys.stderr)
        return 1
    data = {}
    for variant, path in curves.items():
        with open(path, newline="") as fh:
            data[variant] = list(csv.DictReader(fh))
    plots = root / "plots"
    plots.mkdir(exist_ok=True)
    for metric, column in (("success", "success_smoothed"), ("max_power", "max_power_smoothed")):
        length = max(len(rows) for rows in data.values())
        with open(plots / f"{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["update", *data])
            for u in range(length):
                w.writerow([u + 1, *[rows[u][column] if u < len(rows) else "" for rows in data.values()]])
    print(f"wrote {plots / 'success.csv'} and {plots / 'max_power.csv'}")
    return 0


def cmd_gen_maze(args) -> int:
    config = _base_config(args)
    tc = config.task_config if config.task == "maze" else ExperimentConfig.for_variant("maze", "PPT").task_config
    out = Path(args.out or "mazes")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    for i in range(args.count):
        maze = generate_maze(tc, np.random.default_rng([seed, i]), bends=args.bends)
        (out / f"maze_{seed}_{i:03d}.json").write_text(maze.to_json() + "\n")
    print(f"wrote {args.count} mazes to {out}")
    return 0


def cmd_defaults(args) -> int:
    print(describe_defaults(_base_config(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pptrl", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--task", choices=("pushing", "maze"))
        p.add_argument("--variant", choices=sorted(VARIANTS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--episodes", type=int, help="training episodes (eval: evaluation episodes)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("train", help="train one run per seed")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate a checkpoint or run directory"))
    p.add_argument("--checkpoint", help="checkpoint file or run directory")
    p.add_argument("--report", help="also write the summary JSON here")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("matrix", help="train and compare variants"))
    p.add_argument("--variants", help="comma-separated subset of PP,PPT,S,ST")
    p.add_argument("--n-seeds", type=int, default=5, help="with --seed: number of consecutive seeds")
    p.set_defaults(func=cmd_matrix)
    common(sub.add_parser("export-plots", help="plot-data tables from a matrix directory")).set_defaults(
        func=cmd_export_plots)
    p = common(sub.add_parser("gen-maze", help="write evaluation maze geometry files"))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--bends", type=int, default=1)
    p.set_defaults(func=cmd_gen_maze)
    common(sub.add_parser("defaults", help="print every setting with its provenance")).set_defaults(
        func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
