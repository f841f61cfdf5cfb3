"""Episode trajectory, contact log and info-record export."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "yaw", "fn_x", "fn_y", "power", "gamma", "contact")


def write_episode_csv(path, times, positions, yaw, normal_forces, powers, gammas, contact) -> None:
    """One row per control step; columns as in ``TRAJECTORY_COLUMNS``."""
    positions = np.asarray(positions, dtype=float)
    normal_forces = np.asarray(normal_forces, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k, t in enumerate(times):
            w.writerow([repr(float(t)), *map(repr, map(float, positions[k])), repr(float(yaw[k])),
                        *map(repr, map(float, normal_forces[k])), repr(float(powers[k])),
                        repr(float(gammas[k])), int(bool(contact[k]))])


def read_episode_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: data[:, j] for j, name in enumerate(header)}


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_info_json(path, info: dict) -> None:
    Path(path).write_text(json.dumps(_plain(info), indent=2, sort_keys=True) + "\n")
