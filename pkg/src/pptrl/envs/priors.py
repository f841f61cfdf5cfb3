"""Scripted demonstrations and the ProMP priors fitted to them.

Pushing demos are deliberately short (about 8 cm of travel), so the prior
mean alone does not solve the task. Maze demos run straight along +x. Every
demo carries a smooth random perturbation so the fitted covariance has full
rank and via-point conditioning can bend the mean in any direction.
"""
from __future__ import annotations

import numpy as np

from ..promp import BasisConfig, Trajectory, WeightDistribution, basis_matrix, fit_prior

PUSH_K, MAZE_K = 8, 12
PUSH_TOOL_START = (-0.055, 0.0)
N_DEMOS = 60


def _wiggle(rng: np.random.Generator, phases: np.ndarray, K: int, d: int, std: float) -> np.ndarray:
    """Smooth random offset: basis functions with i.i.d. Gaussian weights."""
    return basis_matrix(BasisConfig.uniform(K, d), phases) @ rng.normal(0.0, std, (K, d))


def _min_jerk(phases: np.ndarray, end: float) -> np.ndarray:
    s = np.clip(phases / end, 0.0, 1.0)
    return 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5


def pushing_demos(rng: np.random.Generator, n: int = N_DEMOS, n_points: int = 101) -> list[Trajectory]:
    phases = np.linspace(0.0, 1.0, n_points)
    demos = []
    for _ in range(n):
        start = np.asarray(PUSH_TOOL_START) + rng.normal(0.0, 0.01, 2)
        length = rng.normal(0.08, 0.015)
        drift = rng.normal(0.0, 0.003)
        blend = _min_jerk(phases, rng.uniform(0.7, 0.9))
        pts = np.stack([start[0] + length * blend, start[1] + drift * blend], axis=1)
        pts += _wiggle(rng, phases, PUSH_K, 2, 0.005)
        demos.append(Trajectory(phases, pts))
    return demos


def maze_demos(rng: np.random.Generator, n: int = N_DEMOS, n_points: int = 201) -> list[Trajectory]:
    phases = np.linspace(0.0, 1.0, n_points)
    demos = []
    for _ in range(n):
        start = np.array([0.03, 0.0, 0.0]) + rng.normal(0.0, [0.003, 0.005, 0.002])
        length = rng.uniform(0.95, 1.05)
        blend = _min_jerk(phases, rng.uniform(0.85, 0.95))
        pts = np.stack([start[0] + length * blend, start[1] + rng.normal(0, 0.005) * blend,
                        start[2] + rng.normal(0, 0.003) * np.sin(np.pi * phases)], axis=1)
        pts += _wiggle(rng, phases, MAZE_K, 3, 0.01)
        demos.append(Trajectory(phases, pts))
    return demos


def task_prior(task: str, seed: int = 0) -> tuple[BasisConfig, WeightDistribution]:
    """Basis and fitted prior for a task; fixed seed so every run shares the prior."""
    rng = np.random.default_rng(seed)
    if task == "pushing":
        config = BasisConfig.uniform(PUSH_K, 2)
        return config, fit_prior(config, pushing_demos(rng))
    config = BasisConfig.uniform(MAZE_K, 3)
    return config, fit_prior(config, maze_demos(rng))
