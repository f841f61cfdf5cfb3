"""Vectorized pushing and maze environments.

``VecEnv`` steps ``N`` independent environments in lockstep. Finished
environments are frozen (goal absorption): their state no longer changes and
they return zero reward with ``done`` set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..errors import InvalidInputError, SimulationDivergedError
from . import kernels
from .config import TaskConfig
from .maze import MazeGeometry, generate_maze

PUSHING_OBS_DIM = 19
MAZE_OBS_DIM = 16
MAZE_START_OFFSET = 0.03  # tool starts this far along the corridor


@dataclass
class SimState:
    """Dynamic state and sampled parameters of ``N`` environments (leading axis)."""
    pos: np.ndarray
    vel: np.ndarray
    yaw: np.ndarray
    yaw_rate: np.ndarray
    t: np.ndarray
    done: np.ndarray
    success: np.ndarray
    failed: np.ndarray
    start: np.ndarray           # box start (pushing) or corridor start (maze), xy
    goal: np.ndarray            # xy
    d0: np.ndarray              # initial goal distance
    dist: np.ndarray            # current goal distance (box-goal or remaining arc length)
    contact_force: np.ndarray   # (N, 3) last contact force on the tool
    mu_k: np.ndarray
    mu_s: np.ndarray
    # pushing
    box: np.ndarray | None = None
    box_vel: np.ndarray | None = None
    sliding: np.ndarray | None = None
    box_start: np.ndarray | None = None
    half: np.ndarray | None = None
    mass: np.ndarray | None = None
    # maze
    verts: np.ndarray | None = None
    n_verts: np.ndarray | None = None
    cum: np.ndarray | None = None
    half_width: np.ndarray | None = None
    floor: np.ndarray | None = None
    lateral: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "SimState":
        return SimState(**{f.name: None if getattr(self, f.name) is None else getattr(self, f.name).copy()
                           for f in fields(self)})

    def phase(self, horizon: float) -> np.ndarray:
        return np.clip(self.t / horizon, 0.0, 1.0)

    def twist(self) -> np.ndarray:
        tw = np.zeros((self.n, 6))
        tw[:, :3] = self.vel
        tw[:, 5] = self.yaw_rate
        return tw

    def kinetic_energy(self, tool_mass: float, inertia: float) -> np.ndarray:
        return 0.5 * tool_mass * np.sum(self.vel ** 2, axis=1) + 0.5 * inertia * self.yaw_rate ** 2


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def reward(config: TaskConfig, goal_progress, path_error, in_contact, power, success_event) -> np.ndarray:
    """Weighted per-step reward.

    ``goal_progress`` is the decrease of the goal distance normalized by the
    initial distance, ``path_error`` a non-negative deviation measure, and
    ``power`` the nominal power magnitude. The contact bonus applies to the maze only.
    """
    w = config.reward
    power = np.asarray(power, dtype=float)
    energy = -np.maximum(0.0, power - config.power_budget) - w.alpha * power
    contact = np.asarray(in_contact, dtype=float) if config.task == "maze" else 0.0
    return (w.goal * np.asarray(goal_progress, dtype=float)
            - w.path * config.dt * np.asarray(path_error, dtype=float)
            + w.contact * config.dt * contact
            + w.energy * energy
            + w.success * np.asarray(success_event, dtype=float))


class VecEnv:
    """``N`` environments of one task, stepped together.

    ``gated`` tells the environment that commands pass through an energy tank;
    ungated environments terminate in failure when nominal power exceeds
    ``safety_factor * power_budget``.
    """

    def __init__(self, config: TaskConfig, n_envs: int = 1, gated: bool = False):
        if n_envs < 1:
            raise InvalidInputError("need at least one environment")
        self.config = config
        self.n = n_envs
        self.gated = gated
        self.state: SimState | None = None
        self.mazes: list[MazeGeometry] = []
        tool, contact = config.tool, config.contact
        common = [tool.mass, tool.damping, tool.inertia, tool.rot_damping, contact.k_n, contact.d_n,
                  contact.velocity_scale, contact.static_ratio, tool.servo_gain, tool.servo_gain_rot,
                  tool.max_force]
        if config.task == "pushing":
            extra = [contact.pusher_friction, tool.paddle_half_length, tool.paddle_radius, config.box_admittance, 9.81]
        else:
            extra = [tool.disc_radius]
        self.prm = np.array(common + extra, dtype=float)
        self._out = np.zeros((n_envs, kernels.N_OUT))

    @property
    def obs_dim(self) -> int:
        return PUSHING_OBS_DIM if self.config.task == "pushing" else MAZE_OBS_DIM

    @property
    def dt_sub(self) -> float:
        return self.config.dt / self.config.substeps

    # -- reset ---------------------------------------------------------------
    def reset(self, seeds, mazes: list[MazeGeometry] | None = None) -> np.ndarray:
        seeds = list(seeds)
        if len(seeds) != self.n:
            raise InvalidInputError(f"expected {self.n} seeds, got {len(seeds)}")
        rngs = [np.random.default_rng(s) for s in seeds]
        if self.config.task == "pushing":
            self.state = self._reset_pushing(rngs)
        else:
            if mazes is None:
                mazes = [generate_maze(self.config, rng) for rng in rngs]
            elif len(mazes) != self.n:
                raise InvalidInputError("one maze per environment is required")
            self.state = self._reset_maze(rngs, mazes)
        return self.observe()

    def _base_state(self, n):
        z = np.zeros(n)
        return dict(pos=np.zeros((n, 3)), vel=np.zeros((n, 3)), yaw=z.copy(), yaw_rate=z.copy(), t=z.copy(),
                    done=np.zeros(n, bool), success=np.zeros(n, bool), failed=np.zeros(n, bool),
                    contact_force=np.zeros((n, 3)))

    def _sample_friction(self, rngs):
        mu_k = np.array([rng.uniform(*self.config.friction_range) for rng in rngs])
        return mu_k, self.config.contact.static_ratio * mu_k

    def _reset_pushing(self, rngs) -> SimState:
        c, n = self.config, self.n
        st = self._base_state(n)
        mu_k, mu_s = self._sample_friction(rngs)
        half, mass, box, goal = np.zeros(n), np.zeros(n), np.zeros((n, 3)), np.zeros((n, 2))
        for i, rng in enumerate(rngs):
            k = int(rng.integers(len(c.box_edges)))
            half[i] = c.box_edges[k] / 2
            mass[i] = c.box_masses[k] * rng.uniform(1 - c.mass_jitter, 1 + c.mass_jitter)
            box[i, :2] = rng.uniform(-c.start_jitter, c.start_jitter, 2)
            box[i, 2] = math.radians(rng.uniform(-c.yaw_jitter_deg, c.yaw_jitter_deg))
            goal[i] = np.asarray(c.goal) + rng.uniform(-c.goal_jitter, c.goal_jitter, 2)
            # paddle behind the box, clear of the rotated corners
            st["pos"][i] = [box[i, 0] - half[i] * (abs(math.cos(box[i, 2])) + abs(math.sin(box[i, 2])))
                            - c.tool.paddle_radius - 0.01, box[i, 1] + rng.uniform(-0.005, 0.005), c.tool_height]
        d0 = np.linalg.norm(box[:, :2] - goal, axis=1)
        return SimState(**st, start=box[:, :2].copy(), goal=goal, d0=d0, dist=d0.copy(), mu_k=mu_k, mu_s=mu_s,
                        box=box, box_vel=np.zeros((n, 3)), sliding=np.zeros(n, bool), box_start=box.copy(),
                        half=half, mass=mass)

    def _reset_maze(self, rngs, mazes) -> SimState:
        n = self.n
        st = self._base_state(n)
        mu_k, mu_s = self._sample_friction(rngs)
        m_max = max(len(m.vertices) for m in mazes)
        verts, cum = np.zeros((n, m_max, 2)), np.zeros((n, m_max))
        n_verts = np.zeros(n, np.int64)
        half_width, floor, lengths = np.zeros(n), np.zeros((n, 3)), np.zeros(n)
        start, goal = np.zeros((n, 2)), np.zeros((n, 2))
        for i, (rng, m) in enumerate(zip(rngs, mazes)):
            k = len(m.vertices)
            verts[i, :k], cum[i, :k], n_verts[i] = m.vertices, m.cumulative, k
            half_width[i], lengths[i] = m.width / 2, m.length
            floor[i] = [m.amplitude, m.wavelength, m.phase]
            start[i], goal[i] = m.start, m.end
            h = m.heading_at(0.0)
            lateral = rng.uniform(-0.005, 0.005)
            xy = m.point_at(MAZE_START_OFFSET) + lateral * np.array([-math.sin(h), math.cos(h)])
            st["pos"][i] = [xy[0], xy[1], float(m.floor_height(MAZE_START_OFFSET))]
        self.mazes = list(mazes)
        d0 = lengths - MAZE_START_OFFSET
        return SimState(**st, start=start, goal=goal, d0=d0, dist=d0.copy(), mu_k=mu_k, mu_s=mu_s,
                        verts=verts, n_verts=n_verts, cum=cum, half_width=half_width, floor=floor,
                        lateral=np.zeros(n))

    # -- observation -----------------------------------------------------------
    def observe(self) -> np.ndarray:
        s, c = self.state, self.config
        parts = [s.pos, s.yaw[:, None], s.vel, s.yaw_rate[:, None], s.contact_force,
                 s.phase(c.horizon)[:, None], s.start, s.goal]
        if c.task == "pushing":
            priv = s.box - s.box_start
            priv[:, 2] = _wrap(priv[:, 2])
            parts.append(priv if c.privileged else np.zeros_like(priv))
        return np.concatenate(parts, axis=1)

    # -- commands --------------------------------------------------------------
    def saturate_wrench(self, wrench) -> np.ndarray:
        """Clip the linear force to the actuator limit (the kernel applies the same cap)."""
        w = np.array(wrench, dtype=float)
        norm = np.linalg.norm(w[:, :3], axis=1)
        scale = np.minimum(1.0, self.config.tool.max_force / np.maximum(norm, 1e-300))
        w[:, :3] *= scale[:, None]
        return w

    def velocity_command(self, action) -> tuple[np.ndarray, np.ndarray]:
        """Map a 3-D velocity action to linear and yaw-rate targets (capped)."""
        a = np.asarray(action, dtype=float).reshape(self.n, 3)
        tool = self.config.tool
        v = np.zeros((self.n, 3))
        w = np.zeros(self.n)
        if self.config.task == "pushing":
            v[:, :2] = a[:, :2]
            w = np.clip(a[:, 2], -tool.max_yaw_rate, tool.max_yaw_rate)
        else:
            v[:] = a
        speed = np.linalg.norm(v, axis=1)
        v *= np.minimum(1.0, tool.max_speed / np.maximum(speed, 1e-300))[:, None]
        return v, w

    def servo_wrench(self, action) -> np.ndarray:
        """Nominal wrench of the velocity servo at the current state."""
        v, w = self.velocity_command(action)
        tool, s = self.config.tool, self.state
        out = np.zeros((self.n, 6))
        out[:, :3] = tool.servo_gain * (v - s.vel)
        out[:, 5] = tool.servo_gain_rot * (w - s.yaw_rate)
        return self.saturate_wrench(out)

    # -- step ------------------------------------------------------------------
    def step(self, command, mode: str = "wrench", power=None):
        """Advance one control period.

        ``mode="wrench"``: ``command`` is an ``(N, 6)`` wrench (force and z-torque
        are used). ``mode="velocity"``: ``command`` is an ``(N, 3)`` velocity
        action tracked by the internal servo. ``power`` is the nominal power
        magnitude used by the reward and the safety check (computed from the
        command against the current twist when omitted).
        """
        if self.state is None:
            raise InvalidInputError("reset before step")
        s, c = self.state, self.config
        command = np.asarray(command, dtype=float)
        if not np.all(np.isfinite(command)):
            raise InvalidInputError("command must be finite")
        active = ~s.done
        f_cmd, tau_cmd = np.zeros((self.n, 3)), np.zeros(self.n)
        v_cmd, w_cmd = np.zeros((self.n, 3)), np.zeros(self.n)
        if mode == "wrench":
            command = command.reshape(self.n, 6)
            nominal = self.saturate_wrench(command)
            f_cmd, tau_cmd, kmode = nominal[:, :3].copy(), nominal[:, 5].copy(), 0
        elif mode == "velocity":
            nominal = self.servo_wrench(command)
            v_cmd, w_cmd = self.velocity_command(command)
            kmode = 1
        else:
            raise InvalidInputError(f"unknown command mode {mode!r}")
        if power is None:
            power = np.abs(np.einsum("ni,ni->n", nominal, s.twist()))
        power = np.where(active, np.asarray(power, dtype=float) * np.ones(self.n), 0.0)

        out = self._out
        if c.task == "pushing":
            kernels.pushing_substeps(active, s.pos, s.vel, s.yaw, s.yaw_rate, s.box, s.box_vel, s.sliding,
                                     s.half, s.mass, s.mu_k, s.mu_s, kmode, f_cmd, tau_cmd, v_cmd, w_cmd,
                                     self.prm, c.substeps, self.dt_sub, out)
        else:
            kernels.maze_substeps(active, s.pos, s.vel, s.yaw, s.yaw_rate, s.verts, s.n_verts, s.cum,
                                  s.half_width, s.floor, s.mu_k, kmode, f_cmd, tau_cmd, v_cmd, w_cmd,
                                  self.prm, c.substeps, self.dt_sub, out)
        s.t = np.where(active, s.t + c.dt, s.t)
        s.contact_force = np.where(active[:, None], out[:, :3], s.contact_force)

        finite = np.all(np.isfinite(s.pos), axis=1) & np.all(np.isfinite(s.vel), axis=1)
        if s.box is not None:
            finite &= np.all(np.isfinite(s.box), axis=1)
        diverged = active & ~finite
        if diverged.any():
            # a diverged environment is failed and frozen; scrub it so batched controllers stay finite
            for arr in (s.pos, s.vel, s.yaw, s.yaw_rate, s.box, s.box_vel):
                if arr is not None:
                    arr[diverged] = 0.0

        prev = s.dist.copy()
        if c.task == "pushing":
            dist = np.linalg.norm(s.box[:, :2] - s.goal, axis=1)
            yaw_err = np.abs(_wrap(s.box[:, 2]))
            reached = (dist < c.push_pos_tol) & (yaw_err < math.radians(c.push_yaw_tol_deg))
            path_error = yaw_err
            progress = np.clip(1.0 - dist / s.d0, 0.0, 1.0)
        else:
            remaining = np.maximum(0.0, s.d0 + MAZE_START_OFFSET - out[:, 11])
            dist = np.where(active, remaining, s.dist)
            s.lateral = np.where(active, out[:, 12], s.lateral)
            reached = np.linalg.norm(s.pos[:, :2] - s.goal, axis=1) < c.maze_goal_tol
            path_error = s.lateral / s.half_width
            progress = np.clip(1.0 - dist / s.d0, 0.0, 1.0)
        dist = np.where(diverged, prev, dist)
        s.dist = np.where(active, dist, s.dist)
        in_contact = out[:, 8] > c.contact_threshold

        success_event = active & reached & ~diverged
        safety = active & (not self.gated) & (power > c.safety_factor * c.power_budget)
        horizon = s.t >= c.horizon - 1e-9
        r = reward(c, (prev - s.dist) / s.d0, path_error, in_contact, power, success_event)
        r = np.where(active & ~diverged, r, 0.0)

        s.success |= success_event
        s.failed |= diverged | (safety & ~success_event)
        newly_done = active & (success_event | diverged | safety | horizon)
        s.done |= newly_done
        info = {
            "power": power,
            "wrench_norm": np.linalg.norm(out[:, :3], axis=1),
            "contact": in_contact & active,
            "normal_force": out[:, 9:11].copy(),
            "progress": progress,
            "penetration": out[:, 4].copy(),
            "friction_excess": out[:, 5].copy(),
            "work": out[:, 6].copy(),
            "dissipation": out[:, 7].copy(),
            "success": s.success.copy(),
            "diverged": diverged,
            "safety": safety,
            "active": active,
        }
        return self.observe(), r, s.done.copy(), info


def reset(config: TaskConfig, seed, maze: MazeGeometry | None = None) -> tuple[SimState, np.ndarray]:
    """Single-environment reset; returns the state and the observation vector."""
    env = VecEnv(config, 1)
    obs = env.reset([seed], None if maze is None else [maze])
    return env.state.copy(), obs[0]


def step(state: SimState, command, config: TaskConfig, mode: str = "wrench", gated: bool = False,
         power=None, raise_on_divergence: bool = False):
    """Functional single-environment step; the input state is not modified."""
    env = VecEnv(config, state.n, gated=gated)
    env.state = state.copy()
    obs, r, done, info = env.step(np.atleast_2d(command), mode, power)
    if raise_on_divergence and info["diverged"].any():
        raise SimulationDivergedError("simulation state became non-finite")
    return env.state, obs[0], float(r[0]), bool(done[0]), {k: v[0] for k, v in info.items()}
