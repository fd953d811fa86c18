"""Scenario generation and the two-phase synchronous stepping loop.

Phase 1 computes every vehicle's acceleration (and the HDV strip decisions)
against the frozen snapshot; phase 2 integrates all states at once, realizes
HDV strip moves as exact one-strip displacements, then audits bounding-box
overlaps and boundary excursions.  The whole step is a pure function of the
snapshot, so identical configs reproduce identical runs bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _kernels as _k
from .apl_controller import AplParams, _FleetArrays, apl_step
from .core import RoadGeometry, SimConfig, VehicleClass, VehicleSpec, VehicleState
from .hdv_model import HdvParams
from .metrics import MetricsCollector, MetricsFrame
from .pl_controller import PRESETS, CavParams, FleetSpeedRange, assign_pl

# (length, width) in meters; scenarios mix these five in equal proportion
VEHICLE_TYPES = ((3.2, 1.6), (3.4, 1.7), (3.9, 1.7), (4.55, 1.82), (5.2, 1.88))
V_DES_RANGE = (25.0, 35.0)
HDV_TAU_MEAN = 1.5
HDV_TAU_SD = 0.5
HDV_TAU_BOUNDS = (0.5, 3.0)
CAV_TAU = 0.5
MAX_PLACEMENT_ATTEMPTS = 10**6
# initial placements keep this much clearance so the jerk-limited lateral
# control can always react before first contact during the standing start
PLACEMENT_CLEARANCE_X = 1.0
PLACEMENT_CLEARANCE_Y = 0.5
BOUNDARY_TOL = 0.01


class InitializationError(RuntimeError):
    """Raised when a scenario cannot be constructed (infeasible density)."""


@dataclass(frozen=True)
class ControllerParams:
    """Bundle of every model parameter: HDV law, CAV law, corridor logic."""

    hdv: HdvParams = field(default_factory=HdvParams)
    cav: CavParams = field(default_factory=CavParams)
    apl: AplParams = field(default_factory=AplParams)

    def with_overrides(self, overrides: dict) -> "ControllerParams":
        """Apply `section.field` -> value overrides (hdv., cav., apl.)."""
        parts = {"hdv": dict(), "cav": dict(), "apl": dict()}
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in parts or not name:
                raise KeyError(f"unknown parameter override: {key}")
            parts[section][name] = value
        out = self
        for section, kv in parts.items():
            if kv:
                out = replace(out, **{section: replace(getattr(out, section), **kv)})
        return out

    def with_preset(self, name: str) -> "ControllerParams":
        if name not in PRESETS:
            raise KeyError(f"unknown preset: {name}; known: {sorted(PRESETS)}")
        return replace(self, cav=replace(self.cav, **PRESETS[name]))


@dataclass(frozen=True)
class RngStream:
    """Seeded PCG64 stream; identical seeds reproduce identical draws anywhere."""

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass
class World:
    """Struct-of-arrays fleet snapshot plus immutable per-run attributes."""

    road: RoadGeometry
    config: SimConfig
    is_hdv: np.ndarray
    length: np.ndarray
    width: np.ndarray
    v_des: np.ndarray
    tau: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    mem_left: np.ndarray
    mem_right: np.ndarray
    y_pl: np.ndarray
    step_index: int = 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def speed_range(self) -> FleetSpeedRange:
        if self.n == 0:
            return FleetSpeedRange(0.0, 0.0)
        return FleetSpeedRange(float(self.v_des.min()), float(self.v_des.max()))

    def spec(self, i: int) -> VehicleSpec:
        return VehicleSpec(
            id=i,
            vclass=VehicleClass.HDV if self.is_hdv[i] else VehicleClass.CAV,
            length_m=float(self.length[i]),
            width_m=float(self.width[i]),
            v_des=float(self.v_des[i]),
            tau_s=float(self.tau[i]),
        )

    def state(self, i: int) -> VehicleState:
        return VehicleState(
            x=float(self.x[i]),
            y=float(self.y[i]),
            vx=float(self.vx[i]),
            vy=float(self.vy[i]),
            ax=float(self.ax[i]),
            ay=float(self.ay[i]),
        )

    def fleet(self) -> list[tuple[VehicleSpec, VehicleState]]:
        return [(self.spec(i), self.state(i)) for i in range(self.n)]

    def fleet_arrays(self) -> _FleetArrays:
        return _FleetArrays(
            x=self.x,
            y=self.y,
            vx=self.vx,
            length=self.length,
            width=self.width,
            v_des=self.v_des,
            tau=self.tau,
            is_hdv=self.is_hdv,
        )


def _round_half_away(value: float) -> int:
    return int(math.floor(value + 0.5))


def init_scenario(
    config: SimConfig,
    road: Optional[RoadGeometry] = None,
    params: Optional[ControllerParams] = None,
) -> World:
    """Random standing fleet: uniform non-overlapping positions, zero speeds.

    Draw order is fixed (positions, desired speeds, reaction times, HDV
    subset) so scenarios with the same seed share initial geometry across
    HDV rates and controllers; only the class labels change.
    """
    road = road or RoadGeometry()
    params = params or ControllerParams()
    n = int(round(config.density_veh_km * road.length_m / 1000.0))
    lengths = np.array([VEHICLE_TYPES[i % 5][0] for i in range(n)])
    widths = np.array([VEHICLE_TYPES[i % 5][1] for i in range(n)])
    if n > 0 and widths.max() >= road.width_m:
        raise InitializationError("vehicle width exceeds road width")
    footprint = float((lengths * widths).sum())
    if footprint > 0.9 * road.length_m * road.width_m:
        raise InitializationError(
            f"infeasible density: footprint {footprint:.0f} m^2 exceeds road area"
        )

    rng = RngStream(config.seed).generator()
    x = np.empty(n)
    y = np.empty(n)
    attempts = 0
    for i in range(n):
        while True:
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise InitializationError(
                    f"placement failed after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )
            xi = rng.uniform(0.0, road.length_m)
            yi = rng.uniform(
                road.y_right + 0.5 * widths[i], road.y_left - 0.5 * widths[i]
            )
            if i == 0:
                break
            dx = (x[:i] - xi) % road.length_m
            dx = np.where(dx > 0.5 * road.length_m, dx - road.length_m, dx)
            long_hit = np.abs(dx) < (
                0.5 * (lengths[:i] + lengths[i]) + PLACEMENT_CLEARANCE_X
            )
            lat_hit = np.abs(y[:i] - yi) < (
                0.5 * (widths[:i] + widths[i]) + PLACEMENT_CLEARANCE_Y
            )
            if not (long_hit & lat_hit).any():
                break
        x[i] = xi
        y[i] = yi

    v_des = rng.uniform(*V_DES_RANGE, size=n)
    tau = np.empty(n)
    for i in range(n):
        while True:
            t = rng.normal(HDV_TAU_MEAN, HDV_TAU_SD)
            if HDV_TAU_BOUNDS[0] <= t <= HDV_TAU_BOUNDS[1]:
                tau[i] = t
                break
    n_hdv = min(n, _round_half_away(config.hdv_rate * n))
    is_hdv = np.zeros(n, dtype=bool)
    if n > 0:
        is_hdv[rng.permutation(n)[:n_hdv]] = True
    tau[~is_hdv] = CAV_TAU

    if n == 0:
        speed_range = FleetSpeedRange(0.0, 0.0)
    else:
        speed_range = FleetSpeedRange(float(v_des.min()), float(v_des.max()))
    y_pl = np.array(
        [assign_pl(float(v), speed_range, road, params.cav) for v in v_des]
    )

    def zeros():
        return np.zeros(n)

    return World(
        road=road,
        config=config,
        is_hdv=is_hdv,
        length=lengths,
        width=widths,
        v_des=v_des,
        tau=tau,
        x=x,
        y=y,
        vx=zeros(),
        vy=zeros(),
        ax=zeros(),
        ay=zeros(),
        mem_left=zeros(),
        mem_right=zeros(),
        y_pl=y_pl,
    )


def integrate(
    state: VehicleState, ax: float, ay: float, dt: float, road: RoadGeometry
) -> VehicleState:
    """Double-integrator update with a standstill floor (no reversing).

    When the speed would cross zero the longitudinal acceleration is
    re-derived so the position update is consistent with stopping.
    """
    vx_new = max(0.0, state.vx + dt * ax)
    ax_eff = (vx_new - state.vx) / dt
    x_new = (state.x + dt * state.vx + 0.5 * dt * dt * ax_eff) % road.length_m
    y_new = state.y + dt * state.vy + 0.5 * dt * dt * ay
    vy_new = state.vy + dt * ay
    return VehicleState(x=x_new, y=y_new, vx=vx_new, vy=vy_new, ax=ax, ay=ay)


def _exp_table(road: RoadGeometry, hdv: HdvParams) -> np.ndarray:
    # math.exp keeps the table bit-identical to the per-vehicle reference
    n_max = int(math.ceil(road.width_m / hdv.strip_width_m)) + 2
    return np.array([math.exp(-hdv.lam * n) for n in range(n_max)])


def step(
    world: World,
    params: ControllerParams,
    collector: Optional[MetricsCollector] = None,
    exp_tab: Optional[np.ndarray] = None,
) -> World:
    """Advance the world by one step in place (also returned for chaining)."""
    n = world.n
    config = world.config
    road = world.road
    dt = config.dt_s
    if n == 0:
        world.step_index += 1
        return world
    if exp_tab is None:
        exp_tab = _exp_table(road, params.hdv)

    x, y, vx, vy = world.x, world.y, world.vx, world.vy
    hdv, cav = params.hdv, params.cav
    max_len = float(world.length.max())

    order = np.argsort(x, kind="mergesort")
    pos_of = np.empty(n, dtype=np.int64)
    pos_of[order] = np.arange(n, dtype=np.int64)
    strip_lo = np.empty(n, dtype=np.int64)
    strip_hi = np.empty(n, dtype=np.int64)
    _k.compute_strip_bounds(y, world.width, road.y_right, hdv.strip_width_m, strip_lo, strip_hi)

    leader = np.empty(n, dtype=np.int64)
    leader_gap = np.empty(n)
    _k.find_leaders(
        x, y, world.length, world.width, world.is_hdv, strip_lo, strip_hi,
        order, pos_of, road.length_m, hdv.front_range, cav.front_range,
        max_len, leader, leader_gap,
    )

    if config.controller == "pl" or not world.is_hdv.any():
        y_pl_eff = world.y_pl
    else:
        apl = replace(params.apl, strategy=config.controller)
        y_pl_eff = apl_step(
            world.fleet_arrays(), leader, leader_gap, world.y_pl,
            world.speed_range, road, apl, cav,
        )

    ax_new = np.zeros(n)
    ay_new = np.zeros(n)
    move = np.zeros(n, dtype=np.int64)
    if world.is_hdv.any():
        _k.hdv_control(
            x, y, vx, world.length, world.width, world.v_des, world.tau,
            world.is_hdv, strip_lo, strip_hi, order, pos_of, leader, leader_gap,
            world.mem_left, world.mem_right, road.length_m, road.y_right,
            road.y_left, dt, hdv.strip_width_m, hdv.lam, hdv.benefit_threshold,
            hdv.decel_comfort, hdv.decel_critical, hdv.accel_max, hdv.min_gap,
            hdv.front_range, max_len, exp_tab, ax_new, move,
        )
        for i in np.flatnonzero(move != 0):
            y_dest = y[i] + move[i] * hdv.strip_width_m
            if _k.strip_move_blocked(
                i, y_dest, x, y, vx, world.length, world.width, world.is_hdv,
                road.length_m, hdv.strip_width_m, hdv.min_gap,
                -hdv.decel_critical, -cav.decel_comfort,
            ):
                move[i] = 0
    if not world.is_hdv.all():
        _k.cav_control(
            x, y, vx, vy, world.ax, world.ay, world.length, world.width,
            world.v_des, world.tau, world.is_hdv, leader, leader_gap, y_pl_eff,
            road.length_m, road.y_right, road.y_left, dt,
            cav.front_range, cav.back_range, cav.w_nudge, cav.w_repulse,
            cav.p1, cav.p2, cav.p3, cav.sd2_margin_m, cav.delta_shift_gain,
            cav.min_gap, cav.decel_comfort, cav.accel_pref, cav.k_px,
            cav.k_pl, cav.k_pl_v, cav.k_b1, cav.k_b2,
            cav.neighbor_margin_m, -hdv.decel_critical,
            (cav.accel_pref - cav.decel_comfort) / cav.jerk_x_max,
            cav.ax_min, cav.ax_max, cav.ay_min, cav.ay_max,
            cav.jerk_x_min, cav.jerk_x_max, cav.jerk_y_min, cav.jerk_y_max,
            ax_new, ay_new,
        )

    if collector is not None:
        collector.record_ttc(leader, leader_gap, vx)

    # phase 2: synchronous integration
    prev_ax = world.ax.copy()
    prev_ay = world.ay.copy()
    x_old = x.copy()
    vx_new = np.maximum(0.0, vx + dt * ax_new)
    ax_eff = (vx_new - vx) / dt
    x_new = (x + dt * vx + 0.5 * dt * dt * ax_eff) % road.length_m

    is_h = world.is_hdv
    y_new = np.where(
        is_h,
        y + move * hdv.strip_width_m,
        y + dt * vy + 0.5 * dt * dt * ay_new,
    )
    vy_eff = np.where(is_h, move * hdv.strip_width_m / dt, vy + dt * ay_new)
    ay_state = np.where(is_h, 0.0, ay_new)

    world.x[:] = x_new
    world.y[:] = y_new
    world.vx[:] = vx_new
    world.vy[:] = vy_eff
    world.ax[:] = ax_new
    world.ay[:] = ay_state
    world.step_index += 1

    if collector is not None:
        order2 = np.argsort(x_new, kind="mergesort")
        collisions = _k.count_body_overlaps(
            x_new, y_new, world.length, world.width, order2, road.length_m, max_len
        )
        out_of_road = np.count_nonzero(
            (y_new - 0.5 * world.width < road.y_right - BOUNDARY_TOL)
            | (y_new + 0.5 * world.width > road.y_left + BOUNDARY_TOL)
        )
        collector.record_audit(int(collisions), int(out_of_road))
        t_end = world.step_index * dt
        collector.record_step(
            t_end, x_old, x_new, vx_new, vy_eff, ax_new, ay_state,
            prev_ax, prev_ay,
            limits=(
                cav.ax_min, cav.ax_max, cav.ay_min, cav.ay_max,
                cav.jerk_x_min, cav.jerk_x_max,
            ),
        )
    return world


@dataclass
class RunResult:
    config: SimConfig
    n_vehicles: int
    n_hdv: int
    frame: MetricsFrame


TrajWriter = Callable[[float, World], None]


def run(
    config: SimConfig,
    params: Optional[ControllerParams] = None,
    road: Optional[RoadGeometry] = None,
    traj_writer: Optional[TrajWriter] = None,
    traj_every: int = 0,
    retain_ttc_samples: bool = False,
) -> RunResult:
    """Execute a full scenario and return its metric summary.

    ``traj_writer`` (with ``traj_every`` > 0) receives the world after every
    decimated step for trajectory logging.
    """
    params = params or ControllerParams()
    world = init_scenario(config, road, params)
    road = world.road
    collector = MetricsCollector(
        road=road,
        n_vehicles=world.n,
        duration_s=config.duration_s,
        warmup_s=config.warmup_s,
        dt_s=config.dt_s,
        is_hdv=world.is_hdv,
        retain_ttc_samples=retain_ttc_samples,
    )
    exp_tab = _exp_table(road, params.hdv)
    for k in range(config.n_steps):
        step(world, params, collector, exp_tab)
        if traj_writer is not None and traj_every > 0 and (k + 1) % traj_every == 0:
            traj_writer((k + 1) * config.dt_s, world)
    frame = collector.finalize(
        density_veh_km=world.n / (road.length_m / 1000.0)
    )
    return RunResult(
        config=config,
        n_vehicles=world.n,
        n_hdv=int(world.is_hdv.sum()),
        frame=frame,
    )
