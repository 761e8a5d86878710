"""Simulation and inference toolkit for single-NV charge-state dynamics in donor-doped diamond."""

__version__ = "0.1.0"

from .telegraph import (  # noqa: F401
    ChargeState,
    TelegraphParams,
    TimeTrace,
    dwell_times,
    simulate_trace,
    stationary_population,
)
