"""Actor-critic network and PPO."""
from .network import MLP, NetworkParams, forward, gaussian_entropy, gaussian_log_prob
from .ppo import (ActionSpec, OptimizerState, PPOConfig, RolloutBuffer, act, gae, gaussian_kl,
                  loss_and_grad, ppo_update)

__all__ = [
    "MLP", "NetworkParams", "forward", "gaussian_entropy", "gaussian_log_prob",
    "ActionSpec", "OptimizerState", "PPOConfig", "RolloutBuffer", "act", "gae", "gaussian_kl",
    "loss_and_grad", "ppo_update",
]
