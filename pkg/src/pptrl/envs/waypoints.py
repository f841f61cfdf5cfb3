"""Contact-inferred via-points.

Wall contact is split into clusters of near-constant wall orientation. When
two consecutive sustained clusters differ in orientation by more than a turn
threshold, the corridor has turned; a via-point is placed where the tool left
the earlier wall.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import InvalidInputError
from ..promp import ViaPointSet


@dataclass(frozen=True)
class ContactLog:
    """Per-step record: times (s), tool positions ``(n, d)``, wall normal-force vectors ``(n, 2)``."""
    times: np.ndarray
    positions: np.ndarray
    normal_forces: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if len(self.positions) != n or len(self.normal_forces) != n:
            raise InvalidInputError("contact log fields differ in length")


@dataclass(frozen=True)
class WaypointParams:
    force_threshold: float = 0.05     # N
    cluster_tol_deg: float = 8.0      # orientation spread inside one cluster
    turn_threshold_deg: float = 12.0
    min_steps: int = 10               # sustained-cluster length
    max_gap: int = 3                  # missing contact steps tolerated inside a cluster
    spread_window: int = 10           # exit samples used for the covariance
    min_std: float = 2e-3             # m, covariance floor


@dataclass(frozen=True)
class ContactCluster:
    first: int
    last: int
    orientation: float                # wall-normal line angle in [0, pi)
    size: int


def _line_diff(a: float, b: float) -> float:
    """Angle between two undirected lines, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


@njit(cache=True)
def _scan(angles, idx, tol, max_gap):
    """Greedy run-length clustering of undirected normal angles; returns (first, last, orient, size)."""
    n = len(idx)
    first, last = np.empty(n, np.int64), np.empty(n, np.int64)
    orient, size = np.empty(n), np.empty(n, np.int64)
    m = 0
    f = l = -1
    sx = sy = 0.0
    count = 0
    for k in idx:
        a2 = 2.0 * angles[k]
        if f >= 0:
            mean = (0.5 * math.atan2(sy, sx)) % math.pi
            d = abs(mean - angles[k] % math.pi) % math.pi
            if k - l <= max_gap + 1 and min(d, math.pi - d) <= tol:
                sx += math.cos(a2)
                sy += math.sin(a2)
                l = k
                count += 1
                continue
            first[m], last[m], orient[m], size[m] = f, l, (0.5 * math.atan2(sy, sx)) % math.pi, count
            m += 1
        f = l = k
        sx, sy, count = math.cos(a2), math.sin(a2), 1
    if f >= 0:
        first[m], last[m], orient[m], size[m] = f, l, (0.5 * math.atan2(sy, sx)) % math.pi, count
        m += 1
    return first[:m], last[:m], orient[:m], size[:m]


def contact_clusters(log: ContactLog, params: WaypointParams = WaypointParams()) -> list[ContactCluster]:
    F = np.asarray(log.normal_forces, dtype=float).reshape(-1, 2)
    idx = np.flatnonzero(np.hypot(F[:, 0], F[:, 1]) > params.force_threshold).astype(np.int64)
    angles = np.arctan2(F[:, 1], F[:, 0])
    first, last, orient, size = _scan(angles, idx, math.radians(params.cluster_tol_deg), params.max_gap)
    return [ContactCluster(int(a), int(b), float(o), int(c)) for a, b, o, c in zip(first, last, orient, size)]


def infer_waypoints(log: ContactLog, horizon: float, params: WaypointParams = WaypointParams(),
                    heading: float | None = None) -> ViaPointSet:
    """Via-points at the exits of walls followed by a turned wall.

    ``heading`` (rad, optional) is the initial travel direction. When given it
    acts as a virtual first wall, so a turn met before any side contact is
    still detected; that via-point sits at the onset of the first real contact.
    """
    if len(log.times) == 0:
        return ViaPointSet()
    sustained = [c for c in contact_clusters(log, params) if c.size >= params.min_steps]
    thr = math.radians(params.turn_threshold_deg)
    prev = None if heading is None else (heading + math.pi / 2) % math.pi
    prev_cluster = None
    phases, targets, covs = [], [], []
    pos = np.asarray(log.positions, dtype=float)
    for c in sustained:
        if prev is not None and _line_diff(prev, c.orientation) > thr:
            if prev_cluster is None:
                k, window = c.first, pos[c.first:c.first + params.spread_window]
            else:
                k = prev_cluster.last
                window = pos[max(prev_cluster.first, k - params.spread_window + 1):k + 1]
            cov = np.atleast_2d(np.cov(window.T, bias=True)) if len(window) > 1 else np.zeros((pos.shape[1],) * 2)
            cov = cov + params.min_std ** 2 * np.eye(pos.shape[1])
            phases.append(float(np.clip(log.times[k] / horizon, 0.0, 1.0)))
            targets.append(pos[k])
            covs.append(cov)
        prev, prev_cluster = c.orientation, c
    return ViaPointSet.from_points(phases, targets, covs)
