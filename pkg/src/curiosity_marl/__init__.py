"""Desk-scale laboratory for curiosity-driven multi-agent RL on sparse
cooperative-navigation tasks."""

from .curiosity import CuriosityKind
from .harness import RunConfig, parse_config, run_experiment
from .nav_env import NavEnv, WorldConfig

__version__ = "0.1.0"

__all__ = [
    "CuriosityKind",
    "NavEnv",
    "RunConfig",
    "WorldConfig",
    "parse_config",
    "run_experiment",
    "__version__",
]
