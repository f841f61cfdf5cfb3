"""Training, evaluation and variant-matrix orchestration with on-disk artifacts.

Every random stream is derived from ``(run seed, stream id, index)`` so a run
is reproducible from its configuration and seed alone, and no file written
here contains timestamps or absolute paths.
"""
from __future__ import annotations

import csv
import io
import json
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..energy_tank import trace_csv
from ..envs import MazeGeometry, VecEnv, generate_maze, task_prior
from ..metrics import EpisodeMetrics, aggregate, metrics_table_csv, metrics_to_dict, moving_average
from ..policy import NetworkParams, OptimizerState, ppo_update
from ..policy import checkpoint
from ..policy.ppo import stats_csv_header, stats_csv_row
from .config import ExperimentConfig
from .rollout import run_episodes

TRAIN_STREAM, EVAL_STREAM, MAZE_STREAM, INIT_STREAM, SAMPLE_STREAM = range(5)
CURVE_FIELDS = ("update", "episodes", "success", "max_power", "mean_return", "eval_success",
                "success_smoothed", "max_power_smoothed")
_PRIORS: dict = {}


def stream_seed(run_seed: int, stream: int, index: int = 0) -> int:
    return int(np.random.SeedSequence([int(run_seed), stream, index]).generate_state(1)[0])


def prior_for(config: ExperimentConfig):
    key = (config.task, config.prior_seed)
    if key not in _PRIORS:
        _PRIORS[key] = task_prior(config.task, config.prior_seed)
    return _PRIORS[key]


def train_task_config(config: ExperimentConfig):
    """Training environments: privileged observations on; maze corridors straight."""
    tc = config.task_config.replace(privileged=True)
    return tc.replace(maze_bends=0) if config.task == "maze" else tc


def eval_task_config(config: ExperimentConfig):
    return config.task_config.replace(privileged=False)


def eval_mazes(config: ExperimentConfig, seed: int, n: int) -> list[MazeGeometry] | None:
    """Unseen evaluation mazes (``eval_bends`` bends each), reproducible from the seed."""
    if config.task != "maze":
        return None
    tc = config.task_config
    return [generate_maze(tc, np.random.default_rng(stream_seed(seed, MAZE_STREAM, i)), bends=config.eval_bends)
            for i in range(n)]


def init_params(config: ExperimentConfig, seed: int) -> NetworkParams:
    obs_dim = VecEnv(config.task_config, 1).obs_dim
    rng = np.random.default_rng(stream_seed(seed, INIT_STREAM))
    return NetworkParams.create(obs_dim, config.act_dim, rng, hidden=config.hidden,
                                init_log_std=config.init_log_std)


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    task: str
    variant: str
    updates: int
    episodes: int
    checkpoints: list = field(default_factory=list)
    tank_trace: str | None = None
    curve: str = "curve.csv"
    stats: str = "stats.csv"
    episode_metrics: str = "episodes.csv"
    eval_metrics: list = field(default_factory=list)
    eval_summary: dict = field(default_factory=dict)
    failures: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


@dataclass
class TrainResult:
    manifest: RunManifest
    params: NetworkParams
    curve: list[dict]                  # per-update rows as written to curve.csv (unsmoothed)


@dataclass
class EvalResult:
    metrics: list[EpisodeMetrics]
    summary: dict                      # metric -> [mean, se]
    trace: dict
    waypoints: np.ndarray

    @property
    def success_rate(self) -> float:
        return self.summary["success"][0]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def evaluate_params(config: ExperimentConfig, params: NetworkParams, seed: int, episodes: int | None = None,
                    mazes=None, anchored: bool = True) -> EvalResult:
    """Deterministic-policy rollouts with privileged observations zeroed."""
    n = episodes or config.eval_episodes
    env = VecEnv(eval_task_config(config), n, gated=config.tank.enabled)
    seeds = [stream_seed(seed, EVAL_STREAM, i) for i in range(n)]
    mazes = mazes if mazes is not None else eval_mazes(config, seed, n)
    res = run_episodes(config, params, env, seeds, rng=None, prior=prior_for(config) if config.episodic else None,
                       mazes=mazes, anchored=anchored)
    summary = {k: list(v) for k, v in aggregate(res.metrics).items()}
    return EvalResult(res.metrics, summary, res.trace, res.waypoints)


def evaluate(config: ExperimentConfig, source, seed: int | None = None, episodes: int | None = None) -> EvalResult:
    """Evaluate a checkpoint path, a run directory or parameters in memory.

    Raises :class:`CheckpointMismatchError` when the checkpoint was written
    for a different policy configuration.
    """
    if isinstance(source, NetworkParams):
        params = source
    else:
        path = Path(source)
        if path.is_dir():
            path = path / "checkpoints" / "final.ckpt"
        params, _ = checkpoint.load(path, expected_config=policy_signature(config))
    return evaluate_params(config, params, config.seeds[0] if seed is None else seed, episodes)


def policy_signature(config: ExperimentConfig) -> dict:
    """Fields a checkpoint must agree on to be evaluated under ``config``."""
    return {"task": config.task, "variant": config.variant, "action_mode": config.action_mode,
            "act_dim": config.act_dim, "hidden": list(config.hidden)}


def train(config: ExperimentConfig, seed: int, out_dir=None, log=None) -> TrainResult:
    """Full training run for one seed; writes artifacts when ``out_dir`` is given.

    Episodes whose simulation diverged count as failures; training continues.
    """
    prior = prior_for(config) if config.episodic else None
    params = init_params(config, seed)
    opt = OptimizerState.create(params, config.ppo.lr)
    rng = np.random.default_rng(stream_seed(seed, SAMPLE_STREAM))
    env = VecEnv(train_task_config(config), config.n_envs, gated=config.tank.enabled)
    N = config.n_envs
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.replace(seeds=(seed,)).to_json() + "\n")

    stats_buf = io.StringIO()
    stats_buf.write(stats_csv_header())
    ep_rows, rows, ckpts = [], [], []
    failures = 0
    last_eval = None
    eval_mazes_cache = eval_mazes(config, seed, config.eval_episodes)
    for u in range(config.n_updates):
        seeds = [stream_seed(seed, TRAIN_STREAM, u * N + i) for i in range(N)]
        res = run_episodes(config, params, env, seeds, rng=rng, prior=prior)
        res.buffer.compute_gae(config.ppo.gamma, config.ppo.lam)
        new, opt, stats = ppo_update(params, res.buffer, config.ppo, opt, rng)
        if "error" not in stats:
            new.update_normalizer(res.buffer.obs[res.buffer.valid])
        params = new
        failures += int(np.sum(res.failed & ~res.success))
        stats_buf.write(stats_csv_row(u + 1, stats))
        for i, m in enumerate(res.metrics):
            ep_rows.append([u * N + i, *[_fmt(v) for v in metrics_to_dict(m).values()]])
        row = {"update": u + 1, "episodes": (u + 1) * N, "success": float(np.mean(res.success)),
               "max_power": float(np.mean([m.max_power for m in res.metrics])),
               "mean_return": float(np.mean(res.returns)), "eval_success": None}
        done = u + 1 == config.n_updates
        if (u + 1) % config.eval_every == 0 or done:
            last_eval = evaluate_params(config, params, seed, mazes=eval_mazes_cache)
            row["eval_success"] = last_eval.success_rate
            if config.target_success is not None and last_eval.success_rate >= config.target_success:
                done = True
        rows.append(row)
        if log is not None:
            log(f"update {u + 1}: success {row['success']:.2f} eval {row['eval_success']} "
                f"return {row['mean_return']:.3f} lr {stats.get('lr', 0):.2e}")
        if out is not None and ((u + 1) % config.checkpoint_every == 0):
            name = f"checkpoints/update_{u + 1:05d}.ckpt"
            checkpoint.save(out / name, params, policy_signature(config))
            ckpts.append(name)
        if done:
            break

    if last_eval is None:
        last_eval = evaluate_params(config, params, seed, mazes=eval_mazes_cache)
    manifest = RunManifest(config_hash=config.config_hash(), seed=int(seed), task=config.task,
                           variant=config.variant, updates=len(rows), episodes=len(rows) * N,
                           eval_metrics=[metrics_to_dict(m) for m in last_eval.metrics],
                           eval_summary=last_eval.summary, failures=failures)
    if out is not None:
        checkpoint.save(out / "checkpoints" / "final.ckpt", params, policy_signature(config))
        ckpts.append("checkpoints/final.ckpt")
        manifest.checkpoints = ckpts
        if config.tank.enabled:
            manifest.tank_trace = "tank_trace.csv"
            tr = last_eval.trace
            (out / "tank_trace.csv").write_text(trace_csv(tr["t"], tr["p"], tr["gamma"], tr["E"]))
        (out / "curve.csv").write_text(curve_csv(rows, config.window))
        (out / "stats.csv").write_text(stats_buf.getvalue())
        (out / "episodes.csv").write_text(_table_csv(["episode", *EpisodeMetrics.__dataclass_fields__], ep_rows))
        (out / "manifest.json").write_text(manifest.to_json())
    return TrainResult(manifest, params, rows)


def _table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def curve_csv(rows: list[dict], window: int) -> str:
    succ = moving_average([r["success"] for r in rows], window)
    power = moving_average([r["max_power"] for r in rows], window)
    out = []
    for r, s, p in zip(rows, succ, power):
        out.append([r["update"], r["episodes"], _fmt(r["success"]), _fmt(r["max_power"]), _fmt(r["mean_return"]),
                    _fmt(r["eval_success"]), _fmt(s), _fmt(p)])
    return _table_csv(CURVE_FIELDS, out)


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(fh)]


def run_dir(root, config: ExperimentConfig, seed: int) -> Path:
    return Path(root) / f"{config.task}_{config.variant}_seed{seed}"


def run_matrix(configs: list[ExperimentConfig], out_dir, log=None) -> dict:
    """Train and evaluate every (config, seed) cell.

    Writes ``curves_<variant>.csv`` (mean and standard error across seeds per
    update, plus smoothed means), ``table.csv`` (metrics per variant, mean and
    standard error across seeds) and ``matrix.json``. A failing cell is
    recorded and the matrix continues.
    """
    if not configs:
        raise ValueError("run_matrix needs at least one config")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells, per_variant, curves = [], {}, {}
    for config in configs:
        seed_means, seed_curves = [], []
        for seed in config.seeds:
            cell = {"task": config.task, "variant": config.variant, "seed": int(seed),
                    "dir": run_dir(".", config, seed).as_posix()}
            try:
                result = train(config, seed, run_dir(out, config, seed), log=log)
                manifest = result.manifest
                seed_means.append({k: v[0] for k, v in manifest.eval_summary.items()})
                seed_curves.append(result.curve)
                cell.update(status="ok", eval_success=manifest.eval_summary["success"][0])
            except Exception as exc:  # a failed cell must not stop the matrix
                cell.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                            traceback=traceback.format_exc(limit=3))
            cells.append(cell)
        label = config.variant
        if seed_means:
            per_variant[label] = _across_seeds(seed_means)
            curves[label] = seed_curves
            (out / f"curves_{label}.csv").write_text(matrix_curve_csv(seed_curves, config.window))
    if per_variant:
        (out / "table.csv").write_text(metrics_table_csv(per_variant))
    summary = {"cells": cells, "table": {v: {k: list(m) for k, m in d.items()} for v, d in per_variant.items()}}
    (out / "matrix.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["curves"] = curves
    return summary


def _across_seeds(seed_means: list[dict]) -> dict:
    out = {}
    for key in seed_means[0]:
        v = np.array([m[key] for m in seed_means], dtype=float)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out[key] = (float(v.mean()), se)
    return out


def matrix_curve_csv(seed_curves: list[list[dict]], window: int) -> str:
    """Per-update mean and standard error across seeds (seeds that stopped early drop out)."""
    length = max(len(c) for c in seed_curves)
    rows, succ_means, power_means = [], [], []
    for u in range(length):
        present = [c[u] for c in seed_curves if len(c) > u]
        s = np.array([r["success"] for r in present])
        p = np.array([r["max_power"] for r in present])
        se = (lambda v: float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0)
        rows.append([present[0]["update"], present[0]["episodes"], len(present), _fmt(s.mean()), _fmt(se(s)),
                     _fmt(p.mean()), _fmt(se(p))])
        succ_means.append(s.mean())
        power_means.append(p.mean())
    for row, a, b in zip(rows, moving_average(succ_means, window), moving_average(power_means, window)):
        row += [_fmt(a), _fmt(b)]
    return _table_csv(["update", "episodes", "seeds", "success_mean", "success_se", "max_power_mean",
                       "max_power_se", "success_smoothed", "max_power_smoothed"], rows)


def open_loop_baseline(config: ExperimentConfig, seed: int, episodes: int | None = None,
                       conditioned: bool = False) -> EvalResult:
    """Execute the ProMP prior mean with a zero residual and no replanning.

    ``conditioned=False`` runs the unconditioned prior mean; ``True`` first
    conditions it on the start (and, for the maze, goal) like the episodic
    variants do.
    """
    base = (config if config.episodic else config.with_variant("PP")).replace(replan=False)
    params = init_params(base, seed)
    params.actor.flat = np.zeros_like(params.actor.flat)
    return evaluate_params(base, params, seed, episodes, anchored=conditioned)
