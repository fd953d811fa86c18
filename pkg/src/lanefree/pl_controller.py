"""Potential-line (PL) controller for CAVs.

Each CAV gets a target lateral line from its desired speed (slow right,
fast left), a cruise controller toward its desired speed, ellipsoidal
potential-field forces from surrounding vehicles (front neighbours weighted
w_nudge, rear neighbours w_repulse), a boundary feedback limiter, and a
Gipps-style safe-acceleration hard bound against the overlapping leader.

Reference per-vehicle implementations; the engine runs the identical fleet
kernels from ``_kernels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from . import _kernels as _k
from .core import RoadGeometry, VehicleSpec, VehicleState


@dataclass(frozen=True)
class CavParams:
    k_pl: float = 0.02
    k_pl_v: float = 0.65
    k_px: float = 1.0
    w_nudge: float = 1.0
    w_repulse: float = 0.5
    p1: int = 2
    p2: int = 2
    p3: int = 6
    # ellipse geometry: the half-strength contour sits at 0.5*sd1 =
    # mean length + min_gap + 0.5*tau*v_subject longitudinally (short:
    # steady following is governed by the safe bound, the field handles
    # proximity), and 0.5*sd2 = mean width/2 + margin/2 laterally.  Leader
    # ellipses shift rearward by delta_shift_gain * tau * max(0, closing
    # speed).  The lateral margin sets the spacing the field enforces and
    # with it the usable lane count; calibrated against the capacity and
    # zero-collision targets.
    sd2_margin_m: float = 2.8
    delta_shift_gain: float = 2.0
    k_b1: float = 4.0
    k_b2: float = 3.75
    # the boundary feedback law is also applied against the near edges of
    # laterally adjacent vehicles while a lateral entry would be unsafe
    # (bodies overlap longitudinally or a fore/aft cut-in could not brake
    # out): saturated field forces alone cannot guarantee separation when
    # several neighbours squeeze from the same side.
    neighbor_margin_m: float = 0.1
    b_pl: float = 0.94
    front_range: float = 100.0
    back_range: float = 100.0
    ax_min: float = -4.5
    ax_max: float = 2.6
    ay_min: float = -1.5
    ay_max: float = 1.5
    jerk_x_min: float = -2.0
    jerk_x_max: float = 2.0
    jerk_y_min: float = -2.0
    jerk_y_max: float = 2.0
    accel_pref: float = 1.5
    decel_comfort: float = -1.5
    min_gap: float = 2.0
    tau_s: float = 0.5

    def __post_init__(self):
        if min(self.k_pl, self.k_pl_v, self.k_px, self.w_nudge, self.w_repulse) < 0:
            raise ValueError("controller gains and weights must be non-negative")
        for lo, hi in (
            (self.ax_min, self.ax_max),
            (self.ay_min, self.ay_max),
            (self.jerk_x_min, self.jerk_x_max),
            (self.jerk_y_min, self.jerk_y_max),
        ):
            if lo >= hi:
                raise ValueError("limits must satisfy min < max")
        if self.b_pl <= 0:
            raise ValueError("b_pl must be positive")


# Variant reported to raise all-CAV capacity at the cost of stronger lateral
# activity in mixed traffic.
PRESETS = {"strong-nudge": {"w_nudge": 1.5, "w_repulse": 1.0}}


@dataclass(frozen=True)
class FleetSpeedRange:
    v_min: float
    v_max: float

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")


Fleet = Sequence[tuple[VehicleSpec, VehicleState]]


def assign_pl(
    v_des: float, speed_range: FleetSpeedRange, road: RoadGeometry, params: CavParams
) -> float:
    """Lateral target line for a desired speed: linear from right to left.

    A b_pl margin is kept free on both sides; a degenerate speed range maps
    everything to the road midline.
    """
    if speed_range.v_max == speed_range.v_min:
        return 0.5 * (road.y_right + road.y_left)
    span = road.y_left - road.y_right - 2.0 * params.b_pl
    frac = (v_des - speed_range.v_min) / (speed_range.v_max - speed_range.v_min)
    return road.y_right + params.b_pl + frac * span


def pl_force(y_pl: float, y: float, vy: float, params: CavParams) -> float:
    return _k.pl_force(y_pl, y, vy, params.k_pl, params.k_pl_v)


def cruise_force(vx: float, v_des: float, params: CavParams, dt: float) -> float:
    return _k.cruise_force(vx, v_des, dt, params.accel_pref, params.k_px)


def potential_force(
    subject: tuple[VehicleSpec, VehicleState],
    other: tuple[VehicleSpec, VehicleState],
    params: CavParams,
    road: RoadGeometry,
) -> tuple[float, float]:
    """Force components (fx, fy) the other vehicle's field exerts on the subject.

    The field is an ellipsoid around the other vehicle, shifted rearward for
    leaders by the closing-speed term.  The force points away from the
    (shifted) center, radial in the ellipse-normalized coordinates: front
    neighbours brake the subject, rear neighbours push it forward, and
    alongside neighbours push mostly laterally.
    """
    spec, state = subject
    o_spec, o_state = other
    d = _k.signed_offset(o_state.x - state.x, road.length_m)
    if d >= 0.0:
        shift = params.delta_shift_gain * spec.tau_s * max(0.0, state.vx - o_state.vx)
        dx_eff = shift - d
    else:
        dx_eff = -d
    sd1 = (spec.length_m + o_spec.length_m) + 2.0 * params.min_gap + (
        spec.tau_s * state.vx
    )
    sd2 = 0.5 * (spec.width_m + o_spec.width_m) + params.sd2_margin_m
    dy = state.y - o_state.y
    f = _k.field_magnitude(dx_eff, dy, sd1, sd2, params.p1, params.p2, params.p3)
    gx = dx_eff / (0.5 * sd1)
    gy = dy / (0.5 * sd2)
    r = math.sqrt(gx * gx + gy * gy)
    if r > 0.0:
        return f * gx / r, f * gy / r
    return (-f if d >= 0.0 else f), 0.0


def accumulate_forces(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: CavParams,
    road: RoadGeometry,
) -> tuple[float, float]:
    """Weighted force sums over front and rear neighbourhoods.

    Membership is by signed center offset (front: [0, front_range), back:
    (-back_range, 0)), HDVs included as sources.  Accumulation runs in
    ascending vehicle id.
    """
    spec, state = subject
    fx = 0.0
    fy = 0.0
    for o_spec, o_state in sorted(fleet, key=lambda p: p[0].id):
        if o_spec.id == spec.id:
            continue
        d = _k.signed_offset(o_state.x - state.x, road.length_m)
        if d >= 0.0:
            if d >= params.front_range:
                continue
            w = params.w_nudge
        else:
            if -d >= params.back_range:
                continue
            w = params.w_repulse
        cx, cy = potential_force(subject, (o_spec, o_state), params, road)
        fx += w * cx
        fy += w * cy
    return fx, fy


def boundary_limit(
    y: float, vy: float, width: float, road: RoadGeometry, params: CavParams
) -> tuple[float, float]:
    """(lower, upper) feedback bounds on lateral acceleration at the boundaries."""
    return _k.boundary_bounds(
        y, vy, width, road.y_right, road.y_left, params.k_b1, params.k_b2
    )


def neighbor_limit(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: CavParams,
    road: RoadGeometry,
    brake_hdv: float = 2.6,
) -> tuple[float, float]:
    """(lower, upper) lateral-acceleration bounds against adjacent bodies.

    For every laterally clear vehicle whose slot could not be entered
    safely (bodies overlap longitudinally, or the fore/aft bumper gap is
    below min_gap plus the closing-speed braking distance of whichever
    vehicle would become the follower), the boundary feedback law is
    evaluated against that vehicle's near edge plus margin.  Vehicles the
    subject already overlaps laterally are the longitudinal law's problem.
    """
    spec, state = subject
    lo = -math.inf
    up = math.inf
    brake_self = -params.decel_comfort
    resp = (params.accel_pref - params.decel_comfort) / params.jerk_x_max
    for o_spec, o_state in fleet:
        if o_spec.id == spec.id:
            continue
        half_w_raw = 0.5 * (spec.width_m + o_spec.width_m)
        half_len = 0.5 * (spec.length_m + o_spec.length_m)
        d = _k.signed_offset(o_state.x - state.x, road.length_m)
        clamp = False
        if abs(o_state.y - state.y) >= half_w_raw:
            if d >= 0.0:
                gap = d - half_len
                lin = state.vx - o_state.vx
                need = params.min_gap
                if lin > 0.0:
                    # jerk-limited follower needs `resp` to reach full braking
                    need += lin * resp + lin * (state.vx + o_state.vx) / (
                        2.0 * brake_self
                    )
            else:
                gap = -d - half_len
                lin = o_state.vx - state.vx
                need = params.min_gap
                if lin > 0.0:
                    if o_spec.vclass.value == "hdv":
                        need += lin * (state.vx + o_state.vx) / (2.0 * brake_hdv)
                    else:
                        need += lin * resp + lin * (state.vx + o_state.vx) / (
                            2.0 * brake_self
                        )
            clamp = gap < need
        if not clamp:
            continue
        # edge cushion grows with the inward lateral speed so the
        # jerk-limited feedback engages early enough to stop it
        half_w = half_w_raw + params.neighbor_margin_m
        if o_state.y >= state.y:
            if state.vy > 0.0:
                half_w += 0.5 * resp * state.vy
            edge = o_state.y - half_w
            up = min(up, params.k_b1 * (edge - state.y) - params.k_b2 * state.vy)
        else:
            if state.vy < 0.0:
                half_w -= 0.5 * resp * state.vy
            edge = o_state.y + half_w
            lo = max(lo, params.k_b1 * (edge - state.y) - params.k_b2 * state.vy)
    return lo, up


def safe_bound(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: CavParams,
    road: RoadGeometry,
    dt: float,
) -> float:
    """Hard upper bound on longitudinal acceleration from overlapping leaders.

    Evaluates the safe acceleration against every laterally overlapping
    vehicle ahead within range, not just the nearest one: staggered traffic
    can hide the binding threat behind a faster near leader.  The gap is
    discounted by half a jerk-ramp response time of closing speed because
    the myopic law reacts too late otherwise.
    """
    spec, state = subject
    resp = (params.accel_pref - params.decel_comfort) / params.jerk_x_max
    bound = math.inf
    for o_spec, o_state in fleet:
        if o_spec.id == spec.id:
            continue
        d = _k.signed_offset(o_state.x - state.x, road.length_m)
        if not (
            0.0 < d < params.front_range
            and _k.intervals_overlap(
                state.y, spec.width_m, o_state.y, o_spec.width_m
            )
        ):
            continue
        gap = _k.ring_forward_gap(
            state.x, spec.length_m, o_state.x, o_spec.length_m, road.length_m
        )
        if gap >= params.front_range:
            continue
        gap_eff = gap - 0.5 * resp * max(0.0, state.vx - o_state.vx)
        v_safe = _k.safe_velocity(
            o_state.vx, gap_eff, -params.decel_comfort, spec.tau_s, params.min_gap
        )
        a_safe = _k.safe_acceleration(
            state.vx,
            v_safe,
            gap_eff,
            dt,
            params.decel_comfort,
            params.decel_comfort,
            params.accel_pref,
            params.min_gap,
        )
        bound = min(bound, a_safe)
    return bound


def cav_leader(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    params: CavParams,
    road: RoadGeometry,
) -> Optional[int]:
    """Nearest vehicle ahead with lateral body overlap, within front_range."""
    spec, state = subject
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
        if not _k.intervals_overlap(state.y, spec.width_m, o_state.y, o_spec.width_m):
            continue
        if gap < best_gap or (gap == best_gap and o_spec.id < best):
            best_gap = gap
            best = o_spec.id
    return best


def cav_step(
    subject: tuple[VehicleSpec, VehicleState],
    fleet: Fleet,
    y_pl_effective: float,
    prev_accel: tuple[float, float],
    params: CavParams,
    road: RoadGeometry,
    dt: float,
    brake_hdv: float = 2.6,
) -> tuple[float, float]:
    """One control step: accelerations (ax, ay) after the full clamp chain.

    Longitudinal: cruise + forces, bounded by the safe acceleration against
    overlapping leaders, then acceleration limits, then jerk limits.
    Lateral: forces + line force, then boundary and adjacent-body bounds,
    then acceleration limits, then jerk limits.  The order is fixed;
    reordering changes results.
    """
    spec, state = subject
    prev_ax, prev_ay = prev_accel

    fx, fy = accumulate_forces(subject, fleet, params, road)
    ax = cruise_force(state.vx, spec.v_des, params, dt) + fx
    ax = min(ax, safe_bound(subject, fleet, params, road, dt))
    ax = min(max(ax, params.ax_min), params.ax_max)
    ax = min(max(ax, prev_ax + params.jerk_x_min * dt), prev_ax + params.jerk_x_max * dt)

    ay = fy + pl_force(y_pl_effective, state.y, state.vy, params)
    blo, bhi = boundary_limit(state.y, state.vy, spec.width_m, road, params)
    nlo, nhi = neighbor_limit(subject, fleet, params, road, brake_hdv)
    lo = max(blo, nlo)
    hi = min(bhi, nhi)
    if lo > hi:  # sandwiched: split the difference, road edges win
        ay = min(max(0.5 * (lo + hi), blo), bhi)
    else:
        ay = min(max(ay, lo), hi)
    ay = min(max(ay, params.ay_min), params.ay_max)
    ay = min(max(ay, prev_ay + params.jerk_y_min * dt), prev_ay + params.jerk_y_max * dt)
    return ax, ay
