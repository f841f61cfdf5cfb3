"""Experiment configuration, variant table and provenance of defaults."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..energy_tank import TankConfig
from ..envs.config import TaskConfig
from ..envs.priors import MAZE_K, PUSH_K
from ..errors import InvalidInputError
from ..impedance import ImpedanceGains
from ..policy.ppo import ACTION_MODES, ActionSpec, PPOConfig

# variant -> (policy type, tank enabled)
VARIANTS = {
    "PP": ("episode", False),
    "PPT": ("episode", True),
    "S": ("step", False),
    "ST": ("step", True),
}
EPISODE_MODES = ("episode_promp", "residual_promp_step")

# defaults stated by the source work; every other default is a toy-scale choice
PAPER_KEYS = {
    "task_config.dt", "task_config.friction_range", "task_config.box_edges", "task_config.box_masses",
    "task_config.mass_jitter", "task_config.contact.static_ratio", "task_config.corridor_width",
    "task_config.turn_angle_deg", "task_config.maze_length", "task_config.undulation", "ppo.episodes",
    "hidden", "variant",
}


def default_gains() -> ImpedanceGains:
    return ImpedanceGains.diagonal([300.0] * 3, [35.0] * 3, [2.0] * 3, [0.13] * 3)


def default_tank(dt: float = 0.01) -> TankConfig:
    return TankConfig(E_max=10.0, E_0=10.0, P_max=5.0, dt=dt)


@dataclass(frozen=True)
class ExperimentConfig:
    """One training/evaluation setup; a run pairs it with a seed.

    The tank must be enabled exactly for PPT and ST, and the action mode must
    match the policy type of the variant. Both are checked on construction.
    """
    task: str = "pushing"
    variant: str = "PPT"
    seeds: tuple = tuple(range(10))
    n_envs: int = 16
    action_mode: str = "episode_promp"
    task_config: TaskConfig = field(default_factory=TaskConfig.pushing)
    tank: TankConfig = field(default_factory=default_tank)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    gains: ImpedanceGains = field(default_factory=default_gains)
    hidden: tuple = (256, 256, 128)
    init_log_std: float = -0.7
    weight_scale: float = 0.05          # m of ProMP weight per unit residual action
    velocity_scale: float = 0.3         # m/s per unit velocity action (unit action = speed cap)
    prior_seed: int = 0
    max_updates: int | None = None      # default: ppo.episodes // n_envs
    eval_every: int = 10
    eval_episodes: int = 32
    target_success: float | None = None  # stop once periodic evaluation reaches this rate
    checkpoint_every: int = 50
    window: int = 20
    replan: bool = True                 # maze: contact-inferred via-point replanning
    replan_every: int = 10
    step_interval: int = 25             # decision interval of residual_promp_step
    eval_bends: int = 1                 # maze evaluation: unseen mazes with this many bends
    out_dir: str = "runs"

    def __post_init__(self):
        if self.task not in ("pushing", "maze"):
            raise InvalidInputError(f"unknown task {self.task!r}")
        if self.task_config.task != self.task:
            raise InvalidInputError("task_config.task must equal task")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        kind, tank_on = VARIANTS[self.variant]
        if self.tank.enabled != tank_on:
            raise InvalidInputError(f"variant {self.variant} requires the tank {'on' if tank_on else 'off'}")
        if self.action_mode not in ACTION_MODES:
            raise InvalidInputError(f"unknown action mode {self.action_mode!r}")
        if (self.action_mode in EPISODE_MODES) != (kind == "episode"):
            raise InvalidInputError(f"action mode {self.action_mode} is inconsistent with variant {self.variant}")
        if abs(self.tank.dt - self.task_config.dt) > 1e-15:
            raise InvalidInputError("tank dt must equal the control period")
        if not self.seeds or self.n_envs < 1 or self.eval_episodes < 1 or self.window < 1:
            raise InvalidInputError("seeds, n_envs, eval_episodes and window must be non-empty/positive")
        if self.max_updates is not None and self.max_updates < 1:
            raise InvalidInputError("max_updates must be positive")

    # -- construction ------------------------------------------------------------
    @classmethod
    def for_variant(cls, task: str, variant: str, **kw) -> "ExperimentConfig":
        """Defaults for a (task, variant) cell: tank and action mode follow the variant."""
        if variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {variant!r}")
        kind, tank_on = VARIANTS[variant]
        task_config = kw.pop("task_config", None) or (TaskConfig.pushing() if task == "pushing" else TaskConfig.maze())
        dt = task_config.dt
        tank = kw.pop("tank", None) or (default_tank(dt) if tank_on else TankConfig.disabled(dt))
        if kind == "episode":
            defaults = dict(action_mode="episode_promp", n_envs=16)
        else:
            defaults = dict(action_mode="cartesian_velocity", n_envs=8,
                            ppo=PPOConfig(minibatch_size=512))
        defaults.update(kw)
        return cls(task=task, variant=variant, task_config=task_config, tank=tank, **defaults)

    def with_variant(self, variant: str) -> "ExperimentConfig":
        """Same settings with tank and action mode switched to ``variant``."""
        kind, tank_on = VARIANTS[variant]
        dt = self.task_config.dt
        tank = (self.tank if self.tank.enabled else default_tank(dt)) if tank_on else TankConfig.disabled(dt)
        mode = self.action_mode
        if (mode in EPISODE_MODES) != (kind == "episode"):
            mode = "episode_promp" if kind == "episode" else "cartesian_velocity"
        return replace(self, variant=variant, tank=tank, action_mode=mode)

    def replace(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    @property
    def episodic(self) -> bool:
        return self.action_mode in EPISODE_MODES

    @property
    def act_dim(self) -> int:
        if self.episodic:
            return PUSH_K * 2 if self.task == "pushing" else MAZE_K * 3
        return 3

    @property
    def action_spec(self) -> ActionSpec:
        return ActionSpec(self.action_mode, self.act_dim, self.step_interval)

    @property
    def n_updates(self) -> int:
        if self.max_updates is not None:
            return self.max_updates
        return max(1, math.ceil(self.ppo.episodes / self.n_envs))

    # -- serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["seeds"] = list(self.seeds)
        d["hidden"] = list(self.hidden)
        d["task_config"] = self.task_config.to_dict()
        d["tank"] = {k: (None if isinstance(v, float) and math.isinf(v) else v)
                     for k, v in asdict(self.tank).items()}
        d["ppo"] = self.ppo.to_dict()
        d["gains"] = self.gains.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        task = d.get("task", "pushing")
        if "task_config" in d:
            d["task_config"] = TaskConfig.from_dict(d["task_config"])
        else:
            d["task_config"] = TaskConfig.pushing() if task == "pushing" else TaskConfig.maze()
        if "tank" in d:
            d["tank"] = TankConfig(**{k: (math.inf if v is None else v) for k, v in d["tank"].items()})
        if "ppo" in d:
            d["ppo"] = PPOConfig.from_dict(d["ppo"])
        if "gains" in d:
            d["gains"] = ImpedanceGains.from_dict(d["gains"])
        for key in ("seeds", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def config_hash(self) -> str:
        """Hash of everything that affects results (seeds and output location excluded)."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def provenance(key: str) -> str:
    return "paper" if key in PAPER_KEYS else "spec-default"


def describe_defaults(config: ExperimentConfig | None = None) -> str:
    """Every setting, one per line, tagged ``paper`` or ``spec-default``."""
    config = config or ExperimentConfig()
    lines = []
    for key, value in sorted(_flatten(config.to_dict()).items()):
        lines.append(f"{key} = {json.dumps(value)}  [{provenance(key)}]")
    return "\n".join(lines)
