"""Pose estimation and control simulation for a thruster-actuated cube free-flyer."""
from .config import ScenarioConfig, load, preset
from .sim import consistency_check, monte_carlo, simulate

__all__ = ["ScenarioConfig", "load", "preset", "simulate", "consistency_check", "monte_carlo"]
__version__ = "0.1.0"
