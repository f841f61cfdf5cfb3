"""Polyline corridor mazes: generation, queries and structured-text I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from .config import TaskConfig

MAX_ATTEMPTS = 100


class GeometryError(InvalidInputError):
    """No feasible geometry could be sampled."""


@dataclass(frozen=True)
class MazeGeometry:
    """Corridor of constant ``width`` around a polyline, with a floor height profile.

    The floor height at arc length ``s`` is ``amplitude * sin(2 pi s / wavelength + phase)``.
    """
    vertices: np.ndarray
    width: float
    amplitude: float = 0.0
    wavelength: float = 0.5
    phase: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise InvalidInputError("vertices must be an (M>=2, 2) array")
        if np.any(np.linalg.norm(np.diff(v, axis=0), axis=1) <= 0):
            raise InvalidInputError("repeated vertex")
        if self.width <= 0 or self.wavelength <= 0:
            raise InvalidInputError("width and wavelength must be positive")
        object.__setattr__(self, "vertices", v)

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1))])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0].copy()

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1].copy()

    def point_at(self, s: float) -> np.ndarray:
        cum = self.cumulative
        s = float(np.clip(s, 0.0, cum[-1]))
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(cum) - 2)
        t = (s - cum[j]) / (cum[j + 1] - cum[j])
        return self.vertices[j] + t * (self.vertices[j + 1] - self.vertices[j])

    def heading_at(self, s: float) -> float:
        cum = self.cumulative
        j = min(max(int(np.searchsorted(cum, s, side="right")) - 1, 0), len(cum) - 2)
        d = self.vertices[j + 1] - self.vertices[j]
        return float(math.atan2(d[1], d[0]))

    def floor_height(self, s) -> np.ndarray:
        return self.amplitude * np.sin(2 * np.pi * np.asarray(s, dtype=float) / self.wavelength + self.phase)

    def closest(self, p):
        """Distance to the centerline and arc length of the closest point."""
        p = np.asarray(p, dtype=float)[:2]
        a, b = self.vertices[:-1], self.vertices[1:]
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        q = a + t[:, None] * ab
        d = np.linalg.norm(p - q, axis=1)
        j = int(np.argmin(d))
        return float(d[j]), float(self.cumulative[j] + t[j] * np.linalg.norm(ab[j]))

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "width": self.width, "amplitude": self.amplitude,
                "wavelength": self.wavelength, "phase": self.phase}

    @classmethod
    def from_dict(cls, d: dict) -> "MazeGeometry":
        return cls(np.asarray(d["vertices"], dtype=float), float(d["width"]), float(d.get("amplitude", 0.0)),
                   float(d.get("wavelength", 0.5)), float(d.get("phase", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MazeGeometry":
        return cls.from_dict(json.loads(text))


def _feasible(vertices: np.ndarray, width: float) -> bool:
    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    if np.any(seg < 3 * width):
        return False
    # non-adjacent segments must stay a corridor apart
    for i in range(len(vertices) - 1):
        for j in range(i + 2, len(vertices) - 1):
            if _segment_distance(vertices[i], vertices[i + 1], vertices[j], vertices[j + 1]) < 2 * width:
                return False
    return True


def _segment_distance(a, b, c, d) -> float:
    def point_seg(p, u, v):
        uv = v - u
        t = np.clip(np.dot(p - u, uv) / np.dot(uv, uv), 0, 1)
        return np.linalg.norm(p - (u + t * uv))
    return min(point_seg(a, c, d), point_seg(b, c, d), point_seg(c, a, b), point_seg(d, a, b))


def generate_maze(config: TaskConfig, rng: np.random.Generator, bends: int | None = None) -> MazeGeometry:
    """Sample a corridor starting at the origin.

    ``bends`` (default ``config.maze_bends``) turns of ``turn_angle_deg`` with
    random sign are spread along the length. Infeasible samples are redrawn.
    """
    bends = config.maze_bends if bends is None else bends
    for _ in range(MAX_ATTEMPTS):
        length = rng.uniform(*config.maze_length)
        width = rng.uniform(*config.corridor_width)
        heading = math.radians(rng.uniform(-config.heading_jitter_deg, config.heading_jitter_deg))
        if bends == 0:
            cuts = np.array([])
        elif bends == 1:
            cuts = np.array([rng.uniform(*config.bend_position)])
        else:
            cuts = np.sort(rng.uniform(0.15, 0.85, size=bends))
        s_marks = np.concatenate([[0.0], cuts * length, [length]])
        vertices = [np.zeros(2)]
        for k in range(len(s_marks) - 1):
            seg = s_marks[k + 1] - s_marks[k]
            vertices.append(vertices[-1] + seg * np.array([math.cos(heading), math.sin(heading)]))
            if k < len(cuts):
                turn = math.radians(rng.uniform(*config.turn_angle_deg)) * rng.choice([-1.0, 1.0])
                heading += turn
        vertices = np.array(vertices)
        amplitude = rng.uniform(0.0, config.undulation / 2.0)
        wavelength = rng.uniform(*config.undulation_wavelength)
        phase = rng.uniform(0.0, 2 * math.pi)
        if _feasible(vertices, width):
            return MazeGeometry(vertices, width, amplitude, wavelength, phase)
    raise GeometryError(f"no feasible maze after {MAX_ATTEMPTS} attempts")
