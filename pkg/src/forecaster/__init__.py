"""Learned per-interval hardware reconfiguration on a synthetic multicore model."""

from .config_space import HardwareConfig, decode, encode, enumerate_configs, max_config
from .workload import GenerationRecipe, MachineParams, SyntheticApp, efficiency, evaluate_interval, generate_app

__version__ = "0.1.0"

__all__ = [
    "GenerationRecipe",
    "HardwareConfig",
    "MachineParams",
    "SyntheticApp",
    "decode",
    "efficiency",
    "encode",
    "enumerate_configs",
    "evaluate_interval",
    "generate_app",
    "max_config",
]
