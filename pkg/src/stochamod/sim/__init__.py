"""Fleet simulator and controllers."""

from .controllers import MPCController, ReactiveController, first_step_tasks, uniform_targets
from .engine import (
    Controller,
    Decision,
    EpochError,
    SimulationError,
    Simulator,
    Snapshot,
)
from .scenario import (
    CONTROLLERS,
    EXTRA_CONTROLLERS,
    SimStats,
    make_controller,
    run_scenario,
    simulate,
)

__all__ = [
    "CONTROLLERS", "EXTRA_CONTROLLERS", "Controller", "Decision", "EpochError", "MPCController",
    "ReactiveController", "SimStats", "SimulationError", "Simulator", "Snapshot",
    "first_step_tasks", "make_controller", "run_scenario", "simulate", "uniform_targets",
]
