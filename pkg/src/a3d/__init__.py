"""Adaptive 3D networks: one trainable video model, many operating points.

A single parameter store executes at any configuration (gamma_w, gamma_s,
gamma_t) of width and input resolution inside a compute range; training
distils the full configuration into sampled sub-configurations, calibration
gives each deployable configuration its own BN statistics, and an analytic
cost model plus a Pareto budget table map compute budgets to configurations.
"""

from .configspace import FULL, ComputeRange, Configuration, get_range, reduction_factor
from .costmodel import ArchSpec, NetworkCost, network_cost
from .errors import (A3dError, ConfigError, InfeasibleBudgetError,
                     TrainingDivergedError, UncalibratedConfigError)
from .presets import get_arch, preset_names
from .slimnet import build_model, forward_config

__version__ = "0.1.0"

__all__ = [
    "FULL", "ComputeRange", "Configuration", "get_range", "reduction_factor",
    "ArchSpec", "NetworkCost", "network_cost", "get_arch", "preset_names",
    "build_model", "forward_config",
    "A3dError", "ConfigError", "InfeasibleBudgetError", "TrainingDivergedError",
    "UncalibratedConfigError", "__version__",
]
