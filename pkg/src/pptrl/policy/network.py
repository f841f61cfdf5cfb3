"""Feed-forward actor-critic with hand-written backpropagation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HIDDEN = (256, 256, 128)
OBS_CLIP = 10.0
_LOG_2PI = math.log(2.0 * math.pi)


class MLP:
    """ReLU hidden layers, linear output. Parameters live in one flat vector."""

    def __init__(self, sizes, flat: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)
        self.flat = np.zeros(self.n_params) if flat is None else np.asarray(flat, dtype=float).copy()
        if self.flat.shape != (self.n_params,):
            raise InvalidInputError("flat parameter vector has the wrong length")

    def views(self, flat=None):
        flat = self.flat if flat is None else flat
        out, off = [], 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            out.append(flat[off:off + n].reshape(shape))
            off += n
        return out

    @classmethod
    def initialized(cls, sizes, rng: np.random.Generator, out_gain: float = 1.0) -> "MLP":
        """Orthogonal weights (gain sqrt(2) on hidden layers), zero biases."""
        net = cls(sizes)
        params = net.views()
        n_layers = len(params) // 2
        for i in range(n_layers):
            fan_in, fan_out = net.shapes[2 * i]
            A = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
            Q, R = np.linalg.qr(A)
            Q = Q * np.sign(np.diag(R))
            W = Q if fan_in >= fan_out else Q.T
            gain = out_gain if i == n_layers - 1 else math.sqrt(2.0)
            params[2 * i][...] = gain * W
        return net

    def forward(self, x, flat=None):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise InvalidInputError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        params = self.views(flat)
        acts = [x]
        h = x
        n_layers = len(params) // 2
        for i in range(n_layers):
            z = h @ params[2 * i] + params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out, flat=None) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` with respect to the flat parameters."""
        params = self.views(flat)
        grads = [None] * len(params)
        g = grad_out
        n_layers = len(params) // 2
        for i in reversed(range(n_layers)):
            h_in = acts[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ params[2 * i].T) * (acts[i] > 0)
        return np.concatenate([gr.reshape(-1) for gr in grads])


@dataclass
class NetworkParams:
    """Actor and critic networks plus a state-independent log-std."""
    actor: MLP
    critic: MLP
    log_std: np.ndarray
    obs_mean: np.ndarray = field(default=None)
    obs_var: np.ndarray = field(default=None)
    obs_count: float = 0.0

    def __post_init__(self):
        n = self.actor.sizes[0]
        if self.obs_mean is None:
            self.obs_mean = np.zeros(n)
        if self.obs_var is None:
            self.obs_var = np.ones(n)

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, rng: np.random.Generator, hidden=HIDDEN,
               init_log_std: float = 0.0) -> "NetworkParams":
        actor = MLP.initialized((obs_dim, *hidden, act_dim), rng, out_gain=0.01)
        critic = MLP.initialized((obs_dim, *hidden, 1), rng, out_gain=1.0)
        return cls(actor, critic, np.full(act_dim, float(init_log_std)))

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.actor.flat, self.critic.flat, self.log_std])

    def set_flat(self, flat: np.ndarray) -> None:
        na, nc = self.actor.n_params, self.critic.n_params
        self.actor.flat = flat[:na].copy()
        self.critic.flat = flat[na:na + nc].copy()
        self.log_std = np.clip(flat[na + nc:], LOG_STD_MIN, LOG_STD_MAX).copy()

    def copy(self) -> "NetworkParams":
        return NetworkParams(MLP(self.actor.sizes, self.actor.flat), MLP(self.critic.sizes, self.critic.flat),
                             self.log_std.copy(), self.obs_mean.copy(), self.obs_var.copy(), self.obs_count)

    def normalize(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise InvalidInputError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        # clipping guards features that were (near) constant while the statistics were gathered
        return np.clip((obs - self.obs_mean) / np.sqrt(self.obs_var + 1e-8), -OBS_CLIP, OBS_CLIP)

    def update_normalizer(self, batch) -> None:
        """Merge a batch of raw observations into the running mean/variance."""
        batch = np.asarray(batch, dtype=float).reshape(-1, self.obs_dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean, b_var = batch.mean(axis=0), batch.var(axis=0)
        total = self.obs_count + n
        delta = b_mean - self.obs_mean
        self.obs_mean = self.obs_mean + delta * n / total
        m2 = self.obs_var * self.obs_count + b_var * n + delta ** 2 * self.obs_count * n / total
        self.obs_var = m2 / total
        self.obs_count = total


def forward(params: NetworkParams, obs):
    """Deterministic pass on raw observations: ``(action mean, log-std, value)``."""
    x = params.normalize(obs)
    mean, _ = params.actor.forward(x)
    value, _ = params.critic.forward(x)
    return mean, params.log_std, value[..., 0]


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z ** 2, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * _LOG_2PI


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + _LOG_2PI))
