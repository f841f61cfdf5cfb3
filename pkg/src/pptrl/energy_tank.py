"""Energy-tank passivity gate.

The tank scales a nominal command by ``gamma in [0, 1]`` so that the debited
power never exceeds ``P_max`` and the debited energy never exceeds what the
tank holds (plus the per-step refill). Disabled tanks use ``math.inf`` for
``P_max``, ``E_0`` and ``E_max``, in which case ``gamma`` is always 1.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class TankConfig:
    E_max: float
    E_0: float
    P_max: float
    dt: float
    eps: float = DEFAULT_EPS
    u_in: float = 0.0

    def __post_init__(self):
        if not (self.E_max > 0 and self.P_max > 0 and self.dt > 0 and self.eps > 0):
            raise InvalidInputError("E_max, P_max, dt and eps must be positive")
        if self.u_in < 0 or not 0 <= self.E_0 <= self.E_max:
            raise InvalidInputError("need u_in >= 0 and 0 <= E_0 <= E_max")

    @classmethod
    def disabled(cls, dt: float) -> "TankConfig":
        return cls(E_max=math.inf, E_0=math.inf, P_max=math.inf, dt=dt)

    @property
    def enabled(self) -> bool:
        return math.isfinite(self.P_max) or math.isfinite(self.E_max)

    def initial_state(self) -> "TankState":
        return TankState(E=self.E_0)


@dataclass(frozen=True)
class TankState:
    E: float
    last_gamma: float = 1.0
    last_power: float = 0.0
    cumulative_injected: float = 0.0
    steps: int = 0


def power_batch(wrench, twist) -> np.ndarray:
    """Signed power per row of ``(N, m)`` wrench and twist arrays."""
    return np.einsum("ni,ni->n", np.asarray(wrench, dtype=float), np.asarray(twist, dtype=float))


def instantaneous_power(wrench, twist) -> tuple[float, float]:
    """Signed power ``P = wrench . twist`` and its magnitude ``p = |P|``."""
    P = float(power_batch(np.atleast_2d(wrench), np.atleast_2d(twist))[0])
    return P, abs(P)


def gate_batch(P_max, E, u_in, dt, eps, p) -> np.ndarray:
    """Vectorized gate; guarantees ``gamma*p <= P_max`` and ``gamma*p*dt <= E + u_in`` in floating point."""
    p = np.asarray(p, dtype=float)
    E = np.asarray(E, dtype=float)
    denom = np.maximum(eps, p)
    available = E + u_in
    with np.errstate(invalid="ignore"):
        gamma = np.minimum(1.0, np.minimum(P_max / denom, available / (dt * denom)))
    gamma = np.where(np.isnan(gamma), 1.0, gamma)  # inf/inf only when the tank is disabled
    gamma = np.clip(gamma, 0.0, 1.0)
    # rounding can overshoot a bound by an ulp; walk gamma down until both hold
    for _ in range(4):
        over = (gamma * p > P_max) | (gamma * p * dt > available)
        if not np.any(over):
            break
        gamma = np.where(over, np.nextafter(gamma, 0.0), gamma)
    return gamma


def gate(config: TankConfig, state: TankState, p: float) -> float:
    """Largest admissible scaling for nominal power magnitude ``p``."""
    if p < 0:
        raise InvalidInputError("power magnitude must be non-negative")
    return float(gate_batch(config.P_max, state.E, config.u_in, config.dt, config.eps, p))


def step_batch(config: TankConfig, E, injected, wrench, twist):
    """Gate and update many tanks at once.

    ``wrench`` and ``twist`` have shape ``(N, m)``. Returns ``(gamma, p, E_next,
    injected_next)`` with all arrays of shape ``(N,)``.
    """
    p = np.abs(power_batch(wrench, twist))
    gamma = gate_batch(config.P_max, E, config.u_in, config.dt, config.eps, p)
    available = np.asarray(E, dtype=float) + config.u_in
    denom = np.maximum(config.eps, p)
    with np.errstate(invalid="ignore"):
        # when the energy bound binds the tank is drained exactly, not to a rounding residue
        debit = gamma * p * config.dt
        drained = (available / (config.dt * denom) < np.minimum(1.0, config.P_max / denom)) | (
            available - debit <= 1e-12 * np.maximum(available, 1.0))
        debit = np.where(drained, available, debit)
        E_next = np.where(drained, 0.0, np.minimum(config.E_max, np.maximum(0.0, available - debit)))
    E_next = np.where(np.isinf(available), available, E_next)
    return gamma, p, E_next, np.asarray(injected, dtype=float) + debit


def step(config: TankConfig, state: TankState, wrench, twist) -> tuple[float, TankState]:
    """One tank update for the nominal wrench against the measured twist."""
    gamma, p, E_next, injected = step_batch(config, np.array([state.E]), np.array([state.cumulative_injected]),
                                            np.asarray(wrench, dtype=float)[None], np.asarray(twist, dtype=float)[None])
    gamma = float(gamma[0])
    return gamma, replace(state, E=float(E_next[0]), last_gamma=gamma, last_power=float(p[0]),
                          cumulative_injected=float(injected[0]), steps=state.steps + 1)


def scale_command(gamma: float, command) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError("gamma must lie in [0, 1]")
    return gamma * np.asarray(command, dtype=float)


def trace_csv(t, p, gamma, E) -> str:
    """Per-step tank trace with header ``t,p,gamma,E``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "p", "gamma", "E"])
    for row in zip(t, p, gamma, E):
        writer.writerow([f"{float(v):.10g}" for v in row])
    return buf.getvalue()
