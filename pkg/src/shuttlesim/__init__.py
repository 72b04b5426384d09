"""Simulation toolkit for coupled nanomechanical electron shuttles."""
__version__ = "0.1.0"

from .device import (CapacitanceInput, DeviceConstants, DriveWaveform, ShuttleParams, derive_constants,  # noqa: E402
                     force, free_energy, stored_energy)
from .moments import ClosureConfig, MomentState, integrate, isserlis_moment  # noqa: E402
from .monte_carlo import McConfig, simulate  # noqa: E402
from .reference import ReferenceConfig, evolve  # noqa: E402

__all__ = [
    "CapacitanceInput", "DeviceConstants", "DriveWaveform", "ShuttleParams", "derive_constants", "force",
    "free_energy", "stored_energy", "ClosureConfig", "MomentState", "integrate", "isserlis_moment",
    "McConfig", "simulate", "ReferenceConfig", "evolve",
]
