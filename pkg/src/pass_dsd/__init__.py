"""Simulation and energy-efficiency optimization of pinching-antenna systems
with dual-scale (coarse + fine) antenna deployment."""

__version__ = "0.1.0"

from .config import (ConfigError, GeometryError, GridConfig, MotionSpeeds,  # noqa: E402
                     OptimizerConfig, SystemConfig, table_users)
from .protocols import Protocol, grid_sets, pa_power  # noqa: E402

__all__ = ["ConfigError", "GeometryError", "GridConfig", "MotionSpeeds", "OptimizerConfig",
           "Protocol", "SystemConfig", "grid_sets", "pa_power", "table_users", "__version__"]
