"""Strip-based human driver model.

Longitudinal motion follows a simplified Gipps safe-velocity law against the
nearest vehicle sharing a lateral strip; lateral motion is a one-strip-per-
step change driven by accumulated speed-gain benefits with driver memory.

The functions here are the per-vehicle reference implementations; the engine
runs the numerically identical fleet kernels from ``_kernels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from . import _kernels as _k
from .core import RoadGeometry, VehicleSpec, VehicleState


@dataclass(frozen=True)
class HdvParams:
    strip_width_m: float = 0.05
    lam: float = 0.1
    benefit_threshold: float = 10.0
    decel_comfort: float = -1.5
    decel_critical: float = -2.6
    accel_max: float = 1.5
    min_gap: float = 2.0
    front_range: float = 100.0

    def __post_init__(self):
        if self.strip_width_m <= 0:
            raise ValueError("strip_width_m must be positive")
        if not self.decel_critical < self.decel_comfort < 0 < self.accel_max:
            raise ValueError("need decel_critical < decel_comfort < 0 < accel_max")
        if self.benefit_threshold <= 0:
            raise ValueError("benefit_threshold must be positive")
        if self.min_gap < 0:
            raise ValueError("min_gap must be non-negative")


@dataclass
class DriverMemory:
    """Per-driver accumulated strip-change benefits, one slot per side."""

    acc_benefit_left: float = 0.0
    acc_benefit_right: float = 0.0


Fleet = Sequence[tuple[VehicleSpec, VehicleState]]


def occupied_strips(
    spec: VehicleSpec, state: VehicleState, params: HdvParams, road: RoadGeometry
) -> tuple[int, int]:
    """Inclusive strip-index interval covered by the body with positive measure."""
    return _k.strip_interval(
        state.y, spec.width_m, road.y_right, params.strip_width_m
    )


def _strips_at(y: float, width: float, params: HdvParams, road: RoadGeometry):
    return _k.strip_interval(y, width, road.y_right, params.strip_width_m)


def find_leader_strips(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: HdvParams,
    road: RoadGeometry,
    at_y: Optional[float] = None,
) -> Optional[int]:
    """Nearest vehicle ahead (by bumper gap) sharing a strip with the subject.

    ``at_y`` evaluates the subject as if its center sat at that lateral
    position (used for strip-change benefit lookahead).  Returns the fleet id
    or None when nothing qualifies within front_range.
    """
    spec, state = subject
    y_eval = state.y if at_y is None else at_y
    lo_i, hi_i = _strips_at(y_eval, spec.width_m, params, road)
    best = None
    best_gap = math.inf
    for o_spec, o_state in fleet:
        if o_spec.id == spec.id:
            continue
        gap = _k.ring_forward_gap(
            state.x, spec.length_m, o_state.x, o_spec.length_m, road.length_m
        )
        if gap >= params.front_range:
            continue
        lo_j, hi_j = _strips_at(o_state.y, o_spec.width_m, params, road)
        if lo_i > hi_j or lo_j > hi_i:
            continue
        if gap < best_gap or (gap == best_gap and o_spec.id < best):
            best_gap = gap
            best = o_spec.id
    return best


def safe_velocity(
    v_leader: float, gap: float, params: HdvParams, tau: float
) -> float:
    """Speed that still allows stopping behind the leader; clamped at 0."""
    return _k.safe_velocity(v_leader, gap, -params.decel_comfort, tau, params.min_gap)


def safe_acceleration(
    v_current: float, v_safe: float, gap: float, params: HdvParams, dt: float
) -> float:
    """Acceleration toward v_safe with comfort clamps and the emergency rate."""
    return _k.safe_acceleration(
        v_current,
        v_safe,
        gap,
        dt,
        params.decel_comfort,
        params.decel_critical,
        params.accel_max,
        params.min_gap,
    )


def strip_change_benefit(
    v_safe_dest: float, v_safe_cur: float, v_des: float, n_strips: int, lam: float
) -> float:
    return _k.strip_change_benefit(v_safe_dest, v_safe_cur, v_des, n_strips, lam)


def _capped_safe_velocity(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: HdvParams,
    road: RoadGeometry,
    at_y: Optional[float] = None,
) -> tuple[float, float]:
    """(target speed, gap) at the given lateral position; never above v_des."""
    spec, state = subject
    by_id = {s.id: (s, st) for s, st in fleet}
    lid = find_leader_strips(subject, fleet, params, road, at_y=at_y)
    if lid is None:
        return spec.v_des, math.inf
    l_spec, l_state = by_id[lid]
    gap = _k.ring_forward_gap(
        state.x, spec.length_m, l_state.x, l_spec.length_m, road.length_m
    )
    v = safe_velocity(l_state.vx, gap, params, spec.tau_s)
    return min(v, spec.v_des), gap


def side_benefit_sums(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: HdvParams,
    road: RoadGeometry,
) -> tuple[float, float]:
    """Summed strip-change benefits toward (left, right) this step.

    Destinations run one strip at a time from the current position out to
    the road edge, the subject imagined at each destination center for
    leader lookup.  Safe velocities are capped at v_des on both sides of
    the comparison.
    """
    spec, state = subject
    v_cur, _ = _capped_safe_velocity(subject, fleet, params, road)
    sums = []
    for side in (1, -1):  # +1 toward y_left, -1 toward y_right
        if side == 1:
            room = (road.y_left - 0.5 * spec.width_m - state.y) / params.strip_width_m
        else:
            room = (state.y - 0.5 * spec.width_m - road.y_right) / params.strip_width_m
        n_max = int(math.floor(room + 1e-9))
        total = 0.0
        for n in range(1, n_max + 1):
            y_d = state.y + side * n * params.strip_width_m
            v_d, _ = _capped_safe_velocity(subject, fleet, params, road, at_y=y_d)
            total += strip_change_benefit(v_d, v_cur, spec.v_des, n, params.lam)
        sums.append(total)
    return sums[0], sums[1]


def update_lateral_memory(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    memory: DriverMemory,
    params: HdvParams,
    road: RoadGeometry,
) -> tuple[DriverMemory, int]:
    """Advance driver memory one step; returns (memory', decision).

    Decision is +1 (one strip left), -1 (one strip right) or 0 (stay).  A
    side whose summed benefit this step is non-positive has its accumulator
    halved instead of incremented.  Crossing the threshold empties both
    accumulators; ties between sides go right.
    """
    left_sum, right_sum = side_benefit_sums(subject, fleet, params, road)
    acc_l = (
        memory.acc_benefit_left + left_sum
        if left_sum > 0.0
        else memory.acc_benefit_left * 0.5
    )
    acc_r = (
        memory.acc_benefit_right + right_sum
        if right_sum > 0.0
        else memory.acc_benefit_right * 0.5
    )
    if max(acc_l, acc_r) > params.benefit_threshold:
        decision = 1 if acc_l > acc_r else -1
        return DriverMemory(0.0, 0.0), decision
    return DriverMemory(acc_l, acc_r), 0


def strip_move_blocked(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    y_dest: float,
    params: HdvParams,
    road: RoadGeometry,
    cav_decel_comfort: float = -1.5,
) -> bool:
    """Safety veto on realizing a one-strip move.

    A destination is blocked when the new footprint would come within one
    strip laterally of a vehicle that overlaps longitudinally, or when the
    fore/aft bumper gap is below min_gap plus the closing-speed braking
    distance of whichever vehicle would become the follower.
    """
    spec, state = subject
    brake_hdv = -params.decel_critical
    brake_cav = -cav_decel_comfort
    for o_spec, o_state in fleet:
        if o_spec.id == spec.id:
            continue
        if abs(y_dest - o_state.y) >= (
            0.5 * (spec.width_m + o_spec.width_m) + params.strip_width_m
        ):
            continue
        d = _k.signed_offset(o_state.x - state.x, road.length_m)
        half = 0.5 * (spec.length_m + o_spec.length_m)
        if abs(d) < half:
            return True
        if d > 0:
            gap = d - half
            closing = state.vx * state.vx - o_state.vx * o_state.vx
            brake = brake_hdv
        else:
            gap = -d - half
            closing = o_state.vx * o_state.vx - state.vx * state.vx
            brake = brake_hdv if o_spec.vclass.value == "hdv" else brake_cav
        need = params.min_gap + (closing / (2.0 * brake) if closing > 0.0 else 0.0)
        if gap < need:
            return True
    return False


def hdv_step(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    memory: DriverMemory,
    params: HdvParams,
    road: RoadGeometry,
    dt: float,
) -> tuple[float, int, DriverMemory]:
    """One control step: (ax, realized one-strip move, memory').

    The move is the threshold decision after the safety veto; the engine
    realizes it as an exact strip-width displacement during integration.
    """
    v_target, gap = _capped_safe_velocity(subject, fleet, params, road)
    _, state = subject
    ax = safe_acceleration(state.vx, v_target, gap, params, dt)
    memory, decision = update_lateral_memory(subject, fleet, memory, params, road)
    if decision != 0:
        y_dest = state.y + decision * params.strip_width_m
        if strip_move_blocked(subject, fleet, y_dest, params, road):
            decision = 0
    return ax, decision, memory
