"""Core domain types and ring-road geometry predicates.

Positions are vehicle-center coordinates.  The ring is modelled as a periodic
straight segment: longitudinal positions live in [0, length_m) and wrap, the
lateral axis is absolute within the road cross-section (y_right < y_left).
All wraparound handling goes through the helpers here; no caller ever keeps
an unwrapped coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import _kernels as _k

VALID_CONTROLLERS = ("pl", "cm", "nscm", "fam", "svam")


class VehicleClass(str, Enum):
    HDV = "hdv"
    CAV = "cav"


@dataclass(frozen=True)
class RoadGeometry:
    """Ring road: circumference plus lateral boundary coordinates."""

    length_m: float = 1000.0
    y_right: float = 0.0
    y_left: float = 10.2

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError("length_m must be positive")
        if self.y_left <= self.y_right:
            raise ValueError("y_left must be greater than y_right")

    @property
    def width_m(self) -> float:
        return self.y_left - self.y_right


@dataclass(frozen=True)
class VehicleSpec:
    """Immutable per-vehicle attributes."""

    id: int
    vclass: VehicleClass
    length_m: float
    width_m: float
    v_des: float
    tau_s: float

    def __post_init__(self):
        if self.length_m <= 0 or self.width_m <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if self.v_des <= 0:
            raise ValueError("v_des must be positive")
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")


@dataclass
class VehicleState:
    """Kinematic state advanced by the double integrator.

    ax/ay hold the accelerations applied during the most recent step (used
    by the jerk limiter and the comfort metrics).
    """

    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    """One scenario cell: density, HDV share, controller, seed, timing."""

    density_veh_km: float
    hdv_rate: float
    seed: int
    controller: str = "pl"
    dt_s: float = 0.25
    duration_s: float = 3600.0
    warmup_s: float = 600.0

    def __post_init__(self):
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if self.density_veh_km < 0:
            raise ValueError("density_veh_km must be non-negative")
        if not 0.0 <= self.hdv_rate <= 1.0:
            raise ValueError("hdv_rate must lie in [0, 1]")
        if self.controller not in VALID_CONTROLLERS:
            raise ValueError(f"controller must be one of {VALID_CONTROLLERS}")
        if self.warmup_s < 0 or self.warmup_s >= self.duration_s:
            raise ValueError("warmup_s must lie in [0, duration_s)")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.dt_s))


def wrap_position(x: float, road: RoadGeometry) -> float:
    """Map a longitudinal coordinate into [0, length_m)."""
    return _k.wrap_position(x, road.length_m)


def signed_offset(x_from: float, x_to: float, road: RoadGeometry) -> float:
    """Shortest signed ring distance from x_from to x_to, in (-L/2, L/2]."""
    return _k.signed_offset(x_to - x_from, road.length_m)


def forward_gap(
    f_spec: VehicleSpec,
    f_state: VehicleState,
    l_spec: VehicleSpec,
    l_state: VehicleState,
    road: RoadGeometry,
) -> float:
    """Bumper-to-bumper distance from the follower's front to the leader's back.

    Always non-negative; vehicles that overlap longitudinally wrap all the
    way around the ring, so they never look like nearby leaders.
    """
    return _k.ring_forward_gap(
        f_state.x, f_spec.length_m, l_state.x, l_spec.length_m, road.length_m
    )


def lateral_overlap(
    a_spec: VehicleSpec,
    a_state: VehicleState,
    b_spec: VehicleSpec,
    b_state: VehicleState,
) -> bool:
    """True iff the two bodies' lateral intervals intersect with positive measure.

    Touching edges count as non-overlapping.
    """
    return _k.intervals_overlap(
        a_state.y, a_spec.width_m, b_state.y, b_spec.width_m
    )


def bodies_collide(
    a_spec: VehicleSpec,
    a_state: VehicleState,
    b_spec: VehicleSpec,
    b_state: VehicleState,
    road: RoadGeometry,
) -> bool:
    """Bounding-box overlap test (positive measure on both axes, ring-aware)."""
    d = abs(_k.signed_offset(b_state.x - a_state.x, road.length_m))
    if d >= 0.5 * (a_spec.length_m + b_spec.length_m):
        return False
    return lateral_overlap(a_spec, a_state, b_spec, b_state)
