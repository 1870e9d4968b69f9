"""Stochastic model-predictive rebalancing for on-demand vehicle fleets."""

from .netflow import (
    CostModel,
    DemandSample,
    FleetState,
    OutstandingDemand,
    Plan,
    RoadNetwork,
    ShapeError,
    availability,
    check_flow_conservation,
    check_waiter_conservation,
)

__version__ = "0.1.0"

__all__ = [
    "CostModel", "DemandSample", "FleetState", "OutstandingDemand", "Plan", "RoadNetwork",
    "ShapeError", "availability", "check_flow_conservation", "check_waiter_conservation",
]
