"""Closed-loop episode execution for all four variants.

Episodic variants decode a ProMP reference (conditioned prior mean plus the
policy residual) and track it with the impedance law; step-wise variants send
velocity commands to the servo. With the tank enabled the nominal command is
scaled by ``gamma`` before it reaches the simulator, and the tank invariants
are checked at every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import promp
from ..energy_tank import step_batch
from ..envs import ContactLog, VecEnv, infer_waypoints
from ..impedance import compute_wrench_batch, rot_z
from ..metrics import EpisodeLog, EpisodeMetrics, episode_metrics
from ..policy import NetworkParams, RolloutBuffer, act
from .config import ExperimentConfig

VIA_NOISE = 1e-9  # m^2, small against the prior variance at the anchors


class TankInvariantError(AssertionError):
    """A gated step broke the power, level or injected-energy bound."""


@dataclass
class RolloutResult:
    buffer: RolloutBuffer
    logs: list[EpisodeLog]
    metrics: list[EpisodeMetrics]
    returns: np.ndarray
    success: np.ndarray
    failed: np.ndarray             # diverged or safety-terminated
    waypoints: np.ndarray          # number of contact-inferred via-points used per env
    trace: dict                    # tank trace of env 0: t, p, gamma, E
    references: np.ndarray | None  # final decoded references (episodic variants)


class Planner:
    """Per-environment ProMP references: conditioned prior plus projected residual.

    The residual shifts the weight mean before conditioning, so the executed
    weights are ``base + P @ delta`` and every via-point (start, goal and any
    contact waypoints) is honoured whatever the policy outputs.
    """

    def __init__(self, basis: promp.BasisConfig, prior: promp.WeightDistribution, n_steps: int,
                 condition_goal: bool, anchored: bool = True):
        self.basis, self.prior = basis, prior
        self.n_steps = n_steps
        self.phases = np.arange(n_steps + 1) / n_steps
        self.condition_goal = condition_goal
        self.anchored = anchored  # False: execute the unconditioned prior mean
        self.mean = self.base = self.proj = None
        self.delta = None
        self.refs = None
        self.anchors = []

    def reset(self, start_pos: np.ndarray, goals: np.ndarray) -> None:
        d = self.basis.d
        n = len(start_pos)
        self.anchors = []
        self.mean = np.tile(self.prior.mean, (n, 1))
        self.base = self.mean.copy()
        self.proj = np.tile(np.eye(self.basis.n_weights), (n, 1, 1))
        for i, (p, g) in enumerate(zip(start_pos, goals)):
            start = p[:d].copy()
            goal = np.zeros(d)
            goal[:2] = g
            self.anchors.append((start, goal))
            if self.anchored:
                self._condition(i, self._vias(start, goal, []))
        self.set_residual(np.zeros_like(self.mean))

    def _vias(self, start, goal, middle):
        eye = VIA_NOISE * np.eye(self.basis.d)
        phases, targets, covs = [0.0], [start], [eye]
        for ph, target, cov in middle:
            phases.append(ph)
            targets.append(target)
            covs.append(cov)
        if self.condition_goal:
            phases.append(1.0)
            targets.append(goal)
            covs.append(eye)
        return promp.ViaPointSet.from_points(phases, targets, covs)

    def _condition(self, i: int, vias) -> None:
        cov = self.prior.cov
        self.base[i] = promp.condition(promp.WeightDistribution(self.mean[i], cov), self.basis, vias).mean
        self.proj[i] = promp.residual_projector(self.basis, cov, vias)

    def weights(self) -> np.ndarray:
        return self.base + np.einsum("nij,nj->ni", self.proj, self.delta)

    def set_residual(self, delta: np.ndarray) -> None:
        self.delta = np.asarray(delta, dtype=float)
        self.refs = promp.decode(self.basis, self.weights(), self.phases)

    def replan(self, i: int, waypoints: promp.ViaPointSet, phase: float, position: np.ndarray) -> None:
        """Re-condition env ``i`` on its anchors, the waypoints and the current position."""
        start, goal = self.anchors[i]
        middle = [(v.phase, v.target[:self.basis.d], v.cov[:self.basis.d, :self.basis.d]) for v in waypoints
                  if v.phase < phase]
        middle.append((phase, position[:self.basis.d], VIA_NOISE * np.eye(self.basis.d)))
        executed = self.base[i] + self.proj[i] @ self.delta[i]
        self.mean[i] = executed - self.delta[i]
        self._condition(i, self._vias(start, goal, middle))
        self.refs[i] = promp.decode(self.basis, self.base[i] + self.proj[i] @ self.delta[i], self.phases)

    def targets(self, k: int, dt: float, height: np.ndarray):
        """Desired position and velocity at control step ``k`` (3-D)."""
        n, d = self.refs.shape[0], self.basis.d
        x_d = np.empty((n, 3))
        v_d = np.zeros((n, 3))
        x_d[:, :d] = self.refs[:, k + 1]
        v_d[:, :d] = (self.refs[:, k + 1] - self.refs[:, k]) / dt
        if d < 3:
            x_d[:, 2] = height
        return x_d, v_d


def decision_interval(config: ExperimentConfig, n_steps: int) -> int:
    if config.action_mode == "episode_promp":
        return n_steps
    if config.action_mode == "residual_promp_step":
        return config.action_spec.replan_interval
    return 1


def run_episodes(config: ExperimentConfig, params: NetworkParams, env: VecEnv, seeds, *,
                 rng: np.random.Generator | None, prior=None, mazes=None, anchored: bool = True) -> RolloutResult:
    """Run one batch of episodes (one per environment) to termination.

    ``rng=None`` selects the deterministic (mean) action. ``prior`` is the
    ``(basis, WeightDistribution)`` pair used by the episodic variants;
    ``anchored=False`` skips start/goal conditioning and replanning.
    """
    deterministic = rng is None
    tc = env.config
    N, T, dt = env.n, tc.n_steps, tc.dt
    obs = env.reset(seeds, mazes)
    s = env.state
    tank = config.tank
    gated = tank.enabled
    E = np.full(N, tank.E_0)
    injected = np.zeros(N)

    R = decision_interval(config, T)
    n_dec = math.ceil(T / R)
    buf = RolloutBuffer(n_dec, N, env.obs_dim, params.act_dim)
    buf.log_std = params.log_std.copy()
    dec_rew = np.zeros((n_dec, N))
    dec_done = np.zeros((n_dec, N), dtype=bool)
    dec_valid = np.zeros((n_dec, N), dtype=bool)
    dec = dict(obs=np.zeros((n_dec, N, env.obs_dim)), act=np.zeros((n_dec, N, params.act_dim)),
               logp=np.zeros((n_dec, N)), mean=np.zeros((n_dec, N, params.act_dim)), val=np.zeros((n_dec, N)))

    pos_log = np.zeros((T, N, 3))
    nf_log = np.zeros((T, N, 2))
    wrench_log = np.zeros((T, N))
    power_log = np.zeros((T, N))
    gamma_log = np.ones((T, N))
    contact_log = np.zeros((T, N), dtype=bool)
    progress_log = np.zeros((T, N))
    active_log = np.zeros((T, N), dtype=bool)
    trace = {"t": [], "p": [], "gamma": [], "E": []}

    planner = None
    if config.episodic:
        basis, dist = prior
        planner = Planner(basis, dist, T, condition_goal=config.task == "maze", anchored=anchored)
        planner.reset(s.pos, s.goal)
    height = s.pos[:, 2].copy()
    n_wp = np.zeros(N, dtype=int)
    replanning = config.episodic and config.task == "maze" and config.replan and anchored
    returns = np.zeros(N)
    ident = rot_z(np.zeros(N))
    action = np.zeros((N, params.act_dim))

    for k in range(T):
        active = ~s.done
        if not active.any():
            break
        if k % R == 0:
            j = k // R
            a, logp, mean, value = act(params, obs, rng, deterministic)
            dec["obs"][j], dec["act"][j], dec["logp"][j], dec["mean"][j], dec["val"][j] = obs, a, logp, mean, value
            dec_valid[j] = active
            action = a
            if planner is not None:
                planner.set_residual(config.weight_scale * a)
        if planner is not None:
            x_d, v_d = planner.targets(k, dt, height)
            twist = s.twist()
            nominal = compute_wrench_batch(config.gains, x_d, ident, v_d, np.zeros((N, 3)), s.pos, rot_z(s.yaw),
                                           s.vel, twist[:, 3:])
            nominal = env.saturate_wrench(nominal)
        else:
            cmd = config.velocity_scale * action
            nominal = env.servo_wrench(cmd)
            twist = s.twist()
        if gated:
            gamma, p, E_next, inj_next = step_batch(tank, E, injected, nominal, twist)
            gamma = np.where(active, gamma, 1.0)
            E = np.where(active, E_next, E)
            injected = np.where(active, inj_next, injected)
            _check_tank(tank, gamma, p, E, injected, active, k + 1)
        else:
            p = np.abs(np.einsum("ni,ni->n", nominal, twist))
            gamma = np.ones(N)
        if planner is not None:
            obs, r, done, info = env.step(gamma[:, None] * nominal, "wrench", power=p)
        else:
            obs, r, done, info = env.step(gamma[:, None] * cmd, "velocity", power=p)

        j = k // R
        dec_rew[j] += r
        dec_done[j] |= done & active
        returns += r
        pos_log[k], nf_log[k] = s.pos, info["normal_force"]
        wrench_log[k], power_log[k], gamma_log[k] = info["wrench_norm"], p, gamma
        contact_log[k], progress_log[k], active_log[k] = info["contact"], info["progress"], active
        if active[0]:
            trace["t"].append((k + 1) * dt)
            trace["p"].append(float(p[0]))
            trace["gamma"].append(float(gamma[0]))
            trace["E"].append(float(E[0]))

        if replanning and (k + 1) % config.replan_every == 0:
            times = dt * np.arange(1, k + 2)
            for i in np.flatnonzero(~done):
                wp = infer_waypoints(ContactLog(times, pos_log[:k + 1, i], nf_log[:k + 1, i]), tc.horizon)
                if len(wp) > n_wp[i]:
                    n_wp[i] = len(wp)
                    planner.replan(i, wp, (k + 1) / T, s.pos[i])

    for j in range(n_dec):
        buf.add(dec["obs"][j], dec["act"][j], dec["logp"][j], dec_rew[j], dec["val"][j], dec_done[j] | ~dec_valid[j],
                means=dec["mean"][j], valid=dec_valid[j])

    logs, mets = [], []
    for i in range(N):
        n_i = int(active_log[:, i].sum())
        log = EpisodeLog(dt=dt, horizon=tc.horizon, positions=pos_log[:n_i, i], wrench_norms=wrench_log[:n_i, i],
                         powers=power_log[:n_i, i], gammas=gamma_log[:n_i, i], contact=contact_log[:n_i, i],
                         progress=progress_log[:n_i, i], success=bool(s.success[i]))
        logs.append(log)
        mets.append(episode_metrics(log, tank.P_max if gated else tc.power_budget, gated=gated))
    return RolloutResult(buffer=buf, logs=logs, metrics=mets, returns=returns, success=s.success.copy(),
                         failed=s.failed.copy(), waypoints=n_wp, trace=trace,
                         references=None if planner is None else planner.refs.copy())


def _check_tank(tank, gamma, p, E, injected, active, steps) -> None:
    a = active
    if np.any(gamma[a] * p[a] > tank.P_max):
        raise TankInvariantError("gamma * p exceeded P_max")
    if np.any((E < 0) | (E > tank.E_max)):
        raise TankInvariantError("tank level left [0, E_max]")
    if np.any(injected > tank.E_0 + steps * tank.u_in + 1e-9):
        raise TankInvariantError("injected energy exceeded E_0 + t * u_in")
