"""Toy contact-rich environments: planar box pushing and maze sliding."""
from .config import ContactParams, RewardWeights, TaskConfig, ToolParams
from .core import MAZE_OBS_DIM, PUSHING_OBS_DIM, SimState, VecEnv, reset, reward, step
from .export import read_episode_csv, write_episode_csv, write_info_json
from .maze import GeometryError, MazeGeometry, generate_maze
from .priors import task_prior
from .waypoints import ContactLog, WaypointParams, contact_clusters, infer_waypoints

__all__ = [
    "ContactLog", "ContactParams", "GeometryError", "MAZE_OBS_DIM", "MazeGeometry", "PUSHING_OBS_DIM",
    "RewardWeights", "SimState", "TaskConfig", "ToolParams", "VecEnv", "WaypointParams", "contact_clusters",
    "generate_maze", "infer_waypoints", "read_episode_csv", "reset", "reward", "step", "task_prior",
    "write_episode_csv", "write_info_json",
]
