"""PPO with a clipped surrogate, GAE and a KL-targeting learning rate."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidInputError
from .network import NetworkParams, gaussian_entropy, gaussian_log_prob

ACTION_MODES = ("episode_promp", "residual_promp_step", "cartesian_velocity")


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 5
    minibatch_size: int = 64
    lr: float = 3e-4
    lr_min: float = 1e-5
    lr_max: float = 1e-2
    kl_target: float = 0.01
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    episodes: int = 1000

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise InvalidInputError("clip must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise InvalidInputError("gamma and lambda must lie in (0, 1]")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise InvalidInputError("epochs and minibatch size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        return cls(**d)


@dataclass(frozen=True)
class ActionSpec:
    mode: str
    dim: int
    replan_interval: int = 25

    def __post_init__(self):
        if self.mode not in ACTION_MODES:
            raise InvalidInputError(f"unknown action mode {self.mode!r}")
        if self.dim < 1 or self.replan_interval < 1:
            raise InvalidInputError("dim and replan interval must be positive")


class RolloutBuffer:
    """Fixed-size ``(T, N)`` store of transitions for ``N`` parallel environments."""

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int, act_dim: int):
        if n_steps < 1 or n_envs < 1:
            raise InvalidInputError("buffer needs at least one step and one environment")
        shape = (n_steps, n_envs)
        self.obs = np.zeros(shape + (obs_dim,))
        self.actions = np.zeros(shape + (act_dim,))
        self.log_probs = np.zeros(shape)
        self.means = np.zeros(shape + (act_dim,))
        self.log_std = np.zeros(act_dim)
        self.rewards = np.zeros(shape)
        self.values = np.zeros(shape)
        self.dones = np.zeros(shape, dtype=bool)
        self.valid = np.ones(shape, dtype=bool)   # False marks padding after an episode ended
        self.last_values = np.zeros(n_envs)
        self.advantages = None
        self.returns = None
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr == self.rewards.shape[0]

    def add(self, obs, actions, log_probs, rewards, values, dones, means=None, valid=None) -> None:
        if self.full:
            raise InvalidInputError("buffer is full")
        t = self.ptr
        self.obs[t], self.actions[t], self.log_probs[t] = obs, actions, log_probs
        self.rewards[t], self.values[t], self.dones[t] = rewards, values, dones
        if means is not None:
            self.means[t] = means
        if valid is not None:
            self.valid[t] = valid
        self.ptr += 1
        self.advantages = self.returns = None

    def compute_gae(self, gamma: float, lam: float, last_values=None) -> None:
        if not self.full:
            raise InvalidInputError("advantages need a complete buffer with episode boundaries marked")
        if last_values is not None:
            self.last_values = np.asarray(last_values, dtype=float)
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones, self.last_values, gamma, lam)

    def flat(self) -> dict:
        if self.advantages is None:
            raise InvalidInputError("call compute_gae before reading the flattened batch")
        n = self.rewards.size
        keep = self.valid.reshape(n)
        return {
            "obs": self.obs.reshape(n, -1)[keep],
            "actions": self.actions.reshape(n, -1)[keep],
            "log_probs": self.log_probs.reshape(n)[keep],
            "means": self.means.reshape(n, -1)[keep],
            "advantages": self.advantages.reshape(n)[keep],
            "returns": self.returns.reshape(n)[keep],
        }


def gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """Generalized advantage estimates and return targets.

    Arrays are time-major, ``(T,)`` or ``(T, N)``. ``dones[t]`` marks that the
    episode ended after step ``t``, so nothing is bootstrapped across it.
    ``last_values`` is the critic estimate for the state after the final step.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise InvalidInputError("empty buffer")
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    adv = np.zeros_like(r)
    next_value = np.asarray(last_values, dtype=float) * np.ones_like(r[0])
    running = np.zeros_like(r[0])
    for t in reversed(range(r.shape[0])):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def _normalize_adv(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def loss_and_grad(params: NetworkParams, batch: dict, config: PPOConfig):
    """Total PPO loss ``-L_clip + c_v * L_V - c_e * H`` and its gradient.

    ``batch`` holds raw observations, actions, old log-probs, (already
    normalized) advantages and return targets. The gradient is over
    ``params.flat()``; observation statistics are treated as constants.
    """
    x = params.normalize(batch["obs"])
    a = batch["actions"]
    adv = batch["advantages"]
    B = len(adv)
    mean, acts_a = params.actor.forward(x)
    value, acts_c = params.critic.forward(x)
    value = value[:, 0]
    log_std = params.log_std
    inv_var = np.exp(-2.0 * log_std)

    logp = gaussian_log_prob(a, mean, log_std)
    ratio = np.exp(logp - batch["log_probs"])
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
    surr = np.minimum(unclipped, clipped)
    policy_loss = -surr.mean()
    value_loss = np.mean((value - batch["returns"]) ** 2)
    entropy = gaussian_entropy(log_std)
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    # the min selects the unclipped branch when it is smaller (or tied); the clipped branch is constant
    dlogp = -np.where(unclipped <= clipped, unclipped, 0.0) / B
    diff = a - mean
    g_mean = dlogp[:, None] * diff * inv_var
    g_log_std = (dlogp[:, None] * (diff ** 2 * inv_var - 1.0)).sum(axis=0) - config.entropy_coef
    g_value = config.value_coef * 2.0 * (value - batch["returns"]) / B
    grad = np.concatenate([
        params.actor.backward(acts_a, g_mean),
        params.critic.backward(acts_c, g_value[:, None]),
        g_log_std,
    ])
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip)),
        "clip_bound_ok": bool(np.all(surr <= unclipped)),
        "mean": mean,
    }
    return float(total), grad, stats


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> float:
    """Mean KL(old || new) between diagonal Gaussians over a batch."""
    var_old, var_new = np.exp(2 * log_std_old), np.exp(2 * log_std_new)
    kl = np.sum(log_std_new - log_std_old + (var_old + (mean_old - mean_new) ** 2) / (2 * var_new) - 0.5, axis=-1)
    return float(np.mean(kl))


@dataclass
class OptimizerState:
    """Adam moments plus the adaptive learning rate."""
    lr: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def create(cls, params: NetworkParams, lr: float) -> "OptimizerState":
        n = params.flat().size
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n))

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.lr, self.m.copy(), self.v.copy(), self.t)


def adam_step(flat: np.ndarray, grad: np.ndarray, opt: OptimizerState,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    opt.t += 1
    opt.m = beta1 * opt.m + (1 - beta1) * grad
    opt.v = beta2 * opt.v + (1 - beta2) * grad ** 2
    m_hat = opt.m / (1 - beta1 ** opt.t)
    v_hat = opt.v / (1 - beta2 ** opt.t)
    return flat - opt.lr * m_hat / (np.sqrt(v_hat) + eps)


def ppo_update(params: NetworkParams, buffer: RolloutBuffer, config: PPOConfig,
               opt: OptimizerState, rng: np.random.Generator):
    """Run the clipped-surrogate epochs over a complete buffer.

    Returns ``(new_params, new_opt, stats)``; inputs are left untouched. A
    non-finite loss aborts the update: the original parameters are returned,
    the learning rate is halved and ``stats["error"]`` is set.
    """
    data = buffer.flat()
    data["advantages"] = _normalize_adv(data["advantages"])
    n = len(data["advantages"])
    new, opt = params.copy(), opt.copy()
    mb = min(config.minibatch_size, n)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "kl": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = order[start:start + mb]
            batch = {k: v[idx] for k, v in data.items()}
            loss, grad, st = loss_and_grad(new, batch, config)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                opt = OptimizerState(max(config.lr_min, opt.lr * 0.5), opt.m, opt.v, opt.t)
                return params.copy(), opt, {"error": "non-finite loss", "lr": opt.lr}
            if not st["clip_bound_ok"]:
                raise ArithmeticError("clipped surrogate exceeded the unclipped objective")
            kl = gaussian_kl(batch["means"], buffer.log_std, st["mean"], new.log_std)
            if kl > 2.0 * config.kl_target:
                opt.lr = max(config.lr_min, opt.lr / 2.0)
            elif kl < 0.5 * config.kl_target:
                opt.lr = min(config.lr_max, opt.lr * 2.0)
            norm = float(np.linalg.norm(grad))
            if norm > config.max_grad_norm:
                grad = grad * (config.max_grad_norm / norm)
            new.set_flat(adam_step(new.flat(), grad, opt))
            for k in ("policy_loss", "value_loss", "entropy", "clip_fraction"):
                totals[k] += st[k]
            totals["kl"] += kl
            count += 1
    stats = {k: v / max(count, 1) for k, v in totals.items()}
    stats["lr"] = opt.lr
    stats["mean_reward"] = float(buffer.rewards[buffer.valid].mean())
    return new, opt, stats


def act(params: NetworkParams, obs, rng: np.random.Generator | None = None, deterministic: bool = False,
        spec: ActionSpec | None = None):
    """Sample from the diagonal Gaussian head.

    Returns ``(action, log_prob, mean, value)``. With ``deterministic=True`` the
    action is the mean (evaluation mode, zero-noise sentinel).
    """
    obs = np.asarray(obs, dtype=float)
    if spec is not None and spec.dim != params.act_dim:
        raise InvalidInputError(f"action spec dim {spec.dim} != network output {params.act_dim}")
    x = params.normalize(obs)
    mean, _ = params.actor.forward(x)
    value = params.critic.forward(x)[0][..., 0]
    if deterministic:
        action = mean.copy()
    else:
        if rng is None:
            raise InvalidInputError("stochastic action needs a generator")
        action = mean + np.exp(params.log_std) * rng.standard_normal(mean.shape)
    return action, gaussian_log_prob(action, mean, params.log_std), mean, value


STATS_FIELDS = ("update", "mean_reward", "kl", "policy_loss", "value_loss", "entropy", "lr")


def stats_csv_header() -> str:
    return ",".join(STATS_FIELDS) + "\n"


def stats_csv_row(update: int, stats: dict) -> str:
    buf = io.StringIO()
    row = [update] + [f"{float(stats.get(k, float('nan'))):.10g}" for k in STATS_FIELDS[1:]]
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()
