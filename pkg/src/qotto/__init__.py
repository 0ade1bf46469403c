"""Optically pumped three-level quantum battery and four-level two-stroke engine."""

__version__ = "0.1.0"

from .lindblad import ModelSpec, evolve, find_ness, propagate
from .models import BatteryParams, EngineParams, build_battery3, build_engine4, preset

__all__ = [
    "BatteryParams",
    "EngineParams",
    "ModelSpec",
    "build_battery3",
    "build_engine4",
    "evolve",
    "find_ness",
    "preset",
    "propagate",
]
