"""Scenario simulation, transfer and robustness evaluation, config and CLI."""
from .simulation import (
    RobustnessReport,
    Trajectory,
    robustness_sweep,
    settling_metrics,
    simulate_closed_loop,
    staggered_scenario,
    transfer_eval,
)

__all__ = [
    "RobustnessReport", "Trajectory", "robustness_sweep", "settling_metrics",
    "simulate_closed_loop", "staggered_scenario", "transfer_eval",
]
