"""Lane-free ring-road traffic microsimulation.

Strip-based human-driven vehicles and potential-line controlled CAVs share
a ring road; adaptive corridors remap the CAV lines around slow HDVs.
"""

from .core import RoadGeometry, SimConfig, VehicleClass, VehicleSpec, VehicleState
from .engine import (
    ControllerParams,
    InitializationError,
    RngStream,
    RunResult,
    World,
    init_scenario,
    integrate,
    run,
    step,
)
from .hdv_model import DriverMemory, HdvParams
from .pl_controller import CavParams, FleetSpeedRange
from .apl_controller import AplParams, AplRegion
from .metrics import MetricsCollector, MetricsFrame

__version__ = "0.1.0"

__all__ = [
    "AplParams",
    "AplRegion",
    "CavParams",
    "ControllerParams",
    "DriverMemory",
    "FleetSpeedRange",
    "HdvParams",
    "InitializationError",
    "MetricsCollector",
    "MetricsFrame",
    "RngStream",
    "RoadGeometry",
    "RunResult",
    "SimConfig",
    "VehicleClass",
    "VehicleSpec",
    "VehicleState",
    "World",
    "init_scenario",
    "integrate",
    "run",
    "step",
]
