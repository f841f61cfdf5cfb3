"""Episode evaluation metrics and seed aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass
class EpisodeLog:
    """Per-step episode record at a uniform control period ``dt``."""
    dt: float
    horizon: float
    positions: np.ndarray          # (n, dim)
    wrench_norms: np.ndarray       # (n,)
    powers: np.ndarray             # nominal |P_t|, (n,)
    gammas: np.ndarray             # (n,)
    contact: np.ndarray            # bool, (n,)
    progress: np.ndarray           # (n,)
    success: bool = False

    def __post_init__(self):
        n = len(self.powers)
        for name in ("wrench_norms", "gammas", "contact", "progress"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"{name} length differs from powers")
        if len(self.positions) != n:
            raise InvalidInputError("positions length differs from powers")

    @property
    def gated_powers(self) -> np.ndarray:
        return np.asarray(self.gammas) * np.asarray(self.powers)


@dataclass
class EpisodeMetrics:
    max_power: float
    success: float
    jerk_rms: float
    peak_wrench_p95: float
    overload_ratio: float
    contact_continuity: float
    progress_at_T: float


METRIC_UNITS = {
    "max_power": "W",
    "success": "%",
    "jerk_rms": "m/s^3",
    "peak_wrench_p95": "N",
    "overload_ratio": "%",
    "contact_continuity": "0-1",
    "progress_at_T": "0-1",
}


def _third_derivative(x: np.ndarray, dt: float) -> np.ndarray:
    n = len(x)
    out = np.empty_like(x)
    h3 = dt ** 3
    if n >= 5:
        out[2:n - 2] = (x[4:] - 2 * x[3:n - 1] + 2 * x[1:n - 3] - x[:n - 4]) / (2 * h3)
        edge = [0, 1, n - 2, n - 1]
    else:
        edge = range(n)
    for i in edge:
        s = i if i + 3 < n else max(i - 3, 0)  # forward window, else backward
        out[i] = (x[s + 3] - 3 * x[s + 2] + 3 * x[s + 1] - x[s]) / h3
    return out


def jerk_rms(positions, dt: float) -> float:
    """RMS norm of the third time derivative of position.

    Central five-point stencil in the interior, one-sided four-point
    stencils at the two first and two last samples.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 4:
        raise InvalidInputError("jerk needs at least 4 samples")
    jerk = _third_derivative(x, dt)
    return float(np.sqrt(np.mean(np.sum(jerk ** 2, axis=1))))


def peak_wrench_p95(wrench_norms) -> float:
    w = np.asarray(wrench_norms, dtype=float)
    if w.size == 0:
        raise InvalidInputError("empty wrench series")
    return float(np.percentile(w, 95, method="linear"))


def overload_ratio(powers, P_max: float) -> float:
    p = np.asarray(powers, dtype=float)
    if p.size == 0:
        raise InvalidInputError("empty power series")
    return float(np.count_nonzero(p > P_max) / p.size)


def _contact_runs(flags) -> np.ndarray:
    f = np.asarray(flags, dtype=bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], f, [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return ends - starts


def contact_continuity(contact_flags, mode: str = "longest") -> float:
    """Longest contact run over total in-contact steps (``mode="mean"``: mean run over total)."""
    runs = _contact_runs(contact_flags)
    total = runs.sum()
    if total == 0:
        return 0.0
    if mode == "longest":
        return float(runs.max() / total)
    if mode == "mean":
        return float(runs.mean() / total)
    raise InvalidInputError(f"unknown continuity mode {mode!r}")


def progress_at_T(progress_series) -> float:
    p = np.clip(np.asarray(progress_series, dtype=float), 0.0, 1.0)
    if p.size == 0:
        return 0.0
    return float(np.maximum.accumulate(p)[-1])


def max_power(powers) -> float:
    p = np.asarray(powers, dtype=float)
    return float(p.max()) if p.size else 0.0


def episode_metrics(log: EpisodeLog, P_max: float, gated: bool = False,
                    continuity_mode: str = "longest") -> EpisodeMetrics:
    """All metrics for one episode.

    ``gated`` selects the executed power ``gamma * p`` for max power and the
    overload ratio (the channel a tank actually constrains); otherwise nominal
    power is used.
    """
    powers = log.gated_powers if gated else np.asarray(log.powers)
    positions = np.asarray(log.positions)
    return EpisodeMetrics(
        max_power=max_power(powers),
        success=float(bool(log.success)),
        jerk_rms=jerk_rms(positions, log.dt) if len(positions) >= 4 else 0.0,
        peak_wrench_p95=peak_wrench_p95(log.wrench_norms),
        overload_ratio=overload_ratio(powers, P_max) if math.isfinite(P_max) else 0.0,
        contact_continuity=contact_continuity(log.contact, continuity_mode),
        progress_at_T=progress_at_T(log.progress),
    )


def aggregate(samples: Sequence[EpisodeMetrics]) -> dict[str, tuple[float, float]]:
    """Mean and standard error per metric."""
    if not samples:
        raise InvalidInputError("nothing to aggregate")
    out = {}
    for f in fields(EpisodeMetrics):
        values = np.array([getattr(s, f.name) for s in samples], dtype=float)
        se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        out[f.name] = (float(values.mean()), se)
    return out


def moving_average(values, window: int) -> np.ndarray:
    """Trailing moving average for plotted curves (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def metrics_table_csv(per_variant: dict[str, dict[str, tuple[float, float]]]) -> str:
    """Comparison table: one row per metric, columns ``metric,unit,<variant>...``.

    Cells are ``mean±se``; ratio metrics reported in % are scaled by 100.
    """
    variants = list(per_variant)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "unit"] + variants)
    for name, unit in METRIC_UNITS.items():
        row = [name, unit]
        for v in variants:
            mean, se = per_variant[v][name]
            scale = 100.0 if unit == "%" else 1.0
            row.append(f"{mean * scale:.6g}±{se * scale:.3g}")
        writer.writerow(row)
    return buf.getvalue()


def metrics_to_dict(m: EpisodeMetrics) -> dict:
    return asdict(m)
