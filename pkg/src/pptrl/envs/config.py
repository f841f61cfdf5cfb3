"""Task, contact and reward configuration for the toy environments."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..errors import InvalidInputError

TASKS = ("pushing", "maze")


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the four reward aspects plus a one-off success bonus (non-paper defaults)."""
    goal: float = 1.0
    path: float = 0.1
    contact: float = 0.2
    energy: float = 0.002
    alpha: float = 0.1
    success: float = 1.0


@dataclass(frozen=True)
class ContactParams:
    k_n: float = 5000.0             # N/m
    d_n: float = 50.0               # N s/m
    velocity_scale: float = 1e-3    # tanh friction regularization, m/s
    pusher_friction: float = 0.3    # paddle against box faces
    static_ratio: float = 1.25      # mu_s = static_ratio * mu_k


@dataclass(frozen=True)
class ToolParams:
    mass: float = 1.0               # kg
    damping: float = 5.0            # N s/m
    inertia: float = 0.002          # kg m^2 about z
    rot_damping: float = 0.01       # N m s
    paddle_half_length: float = 0.06
    paddle_radius: float = 0.005
    disc_radius: float = 0.0125
    servo_gain: float = 100.0       # N s/m, velocity servo of S/ST (10 ms time constant)
    servo_gain_rot: float = 0.05    # N m s, yaw-rate servo
    max_speed: float = 0.3          # m/s, velocity command cap
    max_yaw_rate: float = 2.0       # rad/s
    max_force: float = 20.0         # N, actuator force cap


@dataclass(frozen=True)
class TaskConfig:
    task: str = "pushing"
    horizon: float = 10.0
    dt: float = 0.01
    substeps: int = 10
    friction_range: tuple = (0.20, 0.60)
    # pushing
    box_edges: tuple = (0.06, 0.08)
    box_masses: tuple = (0.05, 0.08)
    mass_jitter: float = 0.15
    box_admittance: float = 0.04    # m/(N s) quasi-static slip gain
    start_jitter: float = 0.02
    yaw_jitter_deg: float = 10.0
    goal: tuple = (0.20, 0.0)
    goal_jitter: float = 0.01
    push_pos_tol: float = 0.02
    push_yaw_tol_deg: float = 15.0
    tool_height: float = 0.02
    # maze
    corridor_width: tuple = (0.05, 0.06)
    turn_angle_deg: tuple = (20.0, 45.0)
    maze_length: tuple = (0.9, 1.1)
    maze_bends: int = 0
    bend_position: tuple = (0.4, 0.6)
    heading_jitter_deg: float = 10.0
    undulation: float = 0.04        # peak-to-peak floor height, m
    undulation_wavelength: tuple = (0.3, 0.6)
    maze_goal_tol: float = 0.03
    contact_threshold: float = 0.05  # N, wall force that counts as contact
    # shared
    power_budget: float = 5.0
    safety_factor: float = 3.0
    privileged: bool = True
    reward: RewardWeights = field(default_factory=RewardWeights)
    contact: ContactParams = field(default_factory=ContactParams)
    tool: ToolParams = field(default_factory=ToolParams)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        if self.dt <= 0 or self.horizon <= 0 or self.substeps < 1:
            raise InvalidInputError("dt, horizon and substeps must be positive")
        for name in ("friction_range", "corridor_width", "turn_angle_deg", "maze_length", "bend_position",
                     "undulation_wavelength"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidInputError(f"{name} must be ordered (lo <= hi)")
        if self.friction_range[0] < 0 or self.maze_bends < 0:
            raise InvalidInputError("friction and bend count must be non-negative")

    @classmethod
    def pushing(cls, **kw) -> "TaskConfig":
        return cls(task="pushing", horizon=10.0, **kw)

    @classmethod
    def maze(cls, **kw) -> "TaskConfig":
        return cls(task="maze", horizon=20.0, **kw)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def replace(self, **kw) -> "TaskConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TaskConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        d = dict(d)
        for name, sub in (("reward", RewardWeights), ("contact", ContactParams), ("tool", ToolParams)):
            if isinstance(d.get(name), dict):
                d[name] = sub(**d[name])
        for f in fields(cls):
            if isinstance(d.get(f.name), list):
                d[f.name] = tuple(d[f.name])
        return cls(**d)
