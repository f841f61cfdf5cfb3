"""Experiment orchestration: configs, training, evaluation and the variant matrix."""
from .config import VARIANTS, ExperimentConfig, describe_defaults, provenance
from .rollout import Planner, RolloutResult, TankInvariantError, run_episodes
from .train import (EvalResult, RunManifest, TrainResult, evaluate, evaluate_params, open_loop_baseline,
                    run_matrix, train)

__all__ = [
    "VARIANTS", "ExperimentConfig", "describe_defaults", "provenance", "Planner", "RolloutResult",
    "TankInvariantError", "run_episodes", "EvalResult", "RunManifest", "TrainResult", "evaluate",
    "evaluate_params", "open_loop_baseline", "run_matrix", "train",
]
