"""Deep intrinsically motivated continuous actor-critic on pixel observations."""

from .cacla import CaclaAgent, CaclaHyper, CaclaParams
from .config import ExperimentConfig, load_config, parse_config
from .curiosity import Curiosity, CuriosityConfig, Itm
from .ddpg import DdpgAgent, DdpgHyper, DdpgParams
from .envs import GraspToyEnv, ReachEnv
from .harness import bench_update_costs, run_eval, run_training, summarize
from .replay import PerBuffer, Transition

__all__ = [
    "CaclaAgent",
    "CaclaHyper",
    "CaclaParams",
    "Curiosity",
    "CuriosityConfig",
    "DdpgAgent",
    "DdpgHyper",
    "DdpgParams",
    "ExperimentConfig",
    "GraspToyEnv",
    "Itm",
    "PerBuffer",
    "ReachEnv",
    "Transition",
    "bench_update_costs",
    "load_config",
    "parse_config",
    "run_eval",
    "run_training",
    "summarize",
]
