"""Adaptive potential lines: corridors around slow HDVs.

Each step, HDVs that satisfy the active strategy's condition project a
longitudinal region extending from an activation margin behind them to
their front.  Overlapping regions merge; within a merged region the road
cross-section minus the blocking HDVs' widened footprints yields free
lateral intervals, and the fleet speed range is remapped proportionally
onto those intervals (slow right, fast left).  CAVs inside a region follow
the remapped line, everyone else keeps the plain assignment.

The core works on plain numpy arrays (it is a global per-step pass); thin
wrappers expose the per-vehicle API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as _k
from .core import RoadGeometry, VehicleSpec, VehicleState
from .pl_controller import CavParams, FleetSpeedRange, assign_pl

STRATEGIES = ("cm", "nscm", "fam", "svam")


@dataclass(frozen=True)
class AplParams:
    x_cm: float = 40.0
    x_am: float = 40.0
    b_apl: float = 0.94
    epsilon: float = 0.05
    neighbor_window_m: float = 20.0
    strategy: str = "cm"

    def __post_init__(self):
        if min(self.x_cm, self.x_am, self.b_apl, self.neighbor_window_m) <= 0:
            raise ValueError("distances must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass
class AplRegion:
    """Merged longitudinal region [x_low -> x_high along the ring]."""

    x_low: float
    x_high: float
    arc: float  # forward extent; arc == length_m marks a full-ring region
    free_intervals: list[tuple[float, float]] = field(default_factory=list)
    blocking_hdvs: list[int] = field(default_factory=list)

    def contains(self, x: float, length_m: float) -> bool:
        if self.arc >= length_m:
            return True
        return (x - self.x_low) % length_m <= self.arc


@dataclass(frozen=True)
class _FleetArrays:
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    length: np.ndarray
    width: np.ndarray
    v_des: np.ndarray
    tau: np.ndarray
    is_hdv: np.ndarray


def _fleet_arrays(fleet: Sequence[tuple[VehicleSpec, VehicleState]]) -> _FleetArrays:
    specs = [s for s, _ in fleet]
    states = [st for _, st in fleet]
    return _FleetArrays(
        x=np.array([st.x for st in states]),
        y=np.array([st.y for st in states]),
        vx=np.array([st.vx for st in states]),
        length=np.array([s.length_m for s in specs]),
        width=np.array([s.width_m for s in specs]),
        v_des=np.array([s.v_des for s in specs]),
        tau=np.array([s.tau_s for s in specs]),
        is_hdv=np.array([s.vclass.value == "hdv" for s in specs]),
    )


def surrounding_speed_arrays(
    j: int, fa: _FleetArrays, params: AplParams, road: RoadGeometry
) -> Optional[float]:
    """Mean speed of vehicles behind j within the window, laterally clear of j."""
    gaps = (
        (fa.x[j] - 0.5 * fa.length[j]) - (fa.x + 0.5 * fa.length)
    ) % road.length_m
    behind = gaps < params.neighbor_window_m
    behind[j] = False
    clear = np.abs(fa.y - fa.y[j]) >= 0.5 * (fa.width + fa.width[j])
    mask = behind & clear
    if not mask.any():
        return None
    return float(fa.vx[mask].mean())


def activation_margins(
    fa: _FleetArrays,
    leader: np.ndarray,
    leader_gap: np.ndarray,
    params: AplParams,
    road: RoadGeometry,
    cav_params: CavParams,
) -> dict[int, float]:
    """Map HDV index -> margin x_th for HDVs whose vicinity activates."""
    margins: dict[int, float] = {}
    hdv_ids = np.flatnonzero(fa.is_hdv)
    if params.strategy in ("fam", "svam"):
        # nearest follower CAV per HDV leader
        nearest: dict[int, int] = {}
        for i in np.flatnonzero(~fa.is_hdv):
            j = leader[i]
            if j < 0 or not fa.is_hdv[j] or leader_gap[i] >= params.x_am:
                continue
            cur = nearest.get(int(j))
            if (
                cur is None
                or leader_gap[i] < leader_gap[cur]
                or (leader_gap[i] == leader_gap[cur] and i < cur)
            ):
                nearest[int(j)] = int(i)
    for j in hdv_ids:
        j = int(j)
        if params.strategy == "cm":
            margins[j] = params.x_cm
            continue
        v_s = surrounding_speed_arrays(j, fa, params, road)
        if v_s is None or not fa.vx[j] < v_s:
            continue
        if params.strategy == "nscm":
            margins[j] = params.x_cm
            continue
        i = nearest.get(j)
        if i is None:
            continue
        if params.strategy == "svam":
            v_safe = _k.safe_velocity(
                fa.vx[j],
                leader_gap[i],
                -cav_params.decel_comfort,
                fa.tau[i],
                cav_params.min_gap,
            )
            if not fa.vx[i] <= (1.0 + params.epsilon) * v_safe:
                continue
        # back-of-HDV to back-of-follower distance
        margins[j] = float(leader_gap[i] + fa.length[i])
    return margins


def _subtract_intervals(
    base: tuple[float, float], blocks: list[tuple[float, float]]
) -> list[tuple[float, float]]:
    pieces = [base]
    for blo, bhi in sorted(blocks):
        nxt = []
        for lo, hi in pieces:
            if bhi <= lo or blo >= hi:
                nxt.append((lo, hi))
                continue
            if blo > lo:
                nxt.append((lo, blo))
            if bhi < hi:
                nxt.append((bhi, hi))
        pieces = nxt
    return pieces


def build_regions_arrays(
    fa: _FleetArrays,
    margins: dict[int, float],
    road: RoadGeometry,
    params: AplParams,
    edge_margin: float,
) -> list[AplRegion]:
    """Merge raw per-HDV regions and carve their free lateral intervals."""
    if not margins:
        return []
    raw = []
    for j, m in margins.items():
        start = (fa.x[j] - 0.5 * fa.length[j] - m) % road.length_m
        raw.append((float(start), float(m + fa.length[j]), j))
    raw.sort(key=lambda r: (r[0], r[2]))

    merged: list[list] = []  # [start, end_unwrapped, ids]
    for start, arc, j in raw:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], start + arc)
            merged[-1][2].append(j)
        else:
            merged.append([start, start + arc, [j]])
    # wraparound: the last region may reach past L into the first ones
    if len(merged) > 1 and merged[-1][1] >= road.length_m:
        tail_end = merged[-1][1] - road.length_m
        while len(merged) > 1 and merged[0][0] <= tail_end:
            head = merged.pop(0)
            tail_end = max(tail_end, head[1])
            merged[-1][1] = tail_end + road.length_m
            merged[-1][2].extend(head[2])

    all_hdvs = np.flatnonzero(fa.is_hdv)
    regions = []
    for start, end, ids in merged:
        arc = min(end - start, road.length_m)
        # every HDV body inside the merged span blocks lateral space, not
        # just the ones whose activation created it
        ids = sorted(
            set(int(j) for j in ids)
            | {
                int(j)
                for j in all_hdvs
                if (fa.x[j] - start) % road.length_m <= arc
            }
        )
        base = (road.y_right + edge_margin, road.y_left - edge_margin)
        blocks = [
            (
                fa.y[j] - 0.5 * fa.width[j] - params.b_apl,
                fa.y[j] + 0.5 * fa.width[j] + params.b_apl,
            )
            for j in ids
        ]
        free = [
            (lo, hi)
            for lo, hi in _subtract_intervals(base, blocks)
            if hi - lo >= 2.0 * params.b_apl
        ]
        if not free:
            continue
        regions.append(
            AplRegion(
                x_low=start % road.length_m,
                x_high=(start + arc) % road.length_m,
                arc=arc,
                free_intervals=free,
                blocking_hdvs=sorted(int(j) for j in ids),
            )
        )
    return regions


def map_speed_to_intervals(
    v_des: float, speed_range: FleetSpeedRange, intervals: list[tuple[float, float]]
) -> float:
    """Proportional-by-width mapping of the speed range onto the intervals.

    Intervals are ordered right (slow) to left (fast); a speed landing
    exactly on an interval boundary maps to the right interval's end.
    """
    total = sum(hi - lo for lo, hi in intervals)
    if speed_range.v_max == speed_range.v_min:
        frac = 0.5
    else:
        frac = (v_des - speed_range.v_min) / (speed_range.v_max - speed_range.v_min)
    s = frac * total
    cum = 0.0
    for lo, hi in intervals:
        w = hi - lo
        if s <= cum + w:
            return lo + (s - cum)
        cum += w
    return intervals[-1][1]


def effective_pl(
    cav: tuple[VehicleSpec, VehicleState],
    regions: list[AplRegion],
    speed_range: FleetSpeedRange,
    road: RoadGeometry,
    params: CavParams,
) -> float:
    """Remapped line when the CAV center sits inside a region, else plain."""
    spec, state = cav
    for region in regions:
        if region.contains(state.x, road.length_m):
            return map_speed_to_intervals(
                spec.v_des, speed_range, region.free_intervals
            )
    return assign_pl(spec.v_des, speed_range, road, params)


# ----------------------------------------------------------------- wrappers


def surrounding_speed(
    hdv: tuple[VehicleSpec, VehicleState],
    fleet: Sequence[tuple[VehicleSpec, VehicleState]],
    params: AplParams,
    road: RoadGeometry,
) -> Optional[float]:
    fa = _fleet_arrays(fleet)
    j = next(i for i, (s, _) in enumerate(fleet) if s.id == hdv[0].id)
    return surrounding_speed_arrays(j, fa, params, road)


def build_regions(
    fleet: Sequence[tuple[VehicleSpec, VehicleState]],
    params: AplParams,
    road: RoadGeometry,
    cav_params: CavParams,
    leader: np.ndarray,
    leader_gap: np.ndarray,
) -> list[AplRegion]:
    fa = _fleet_arrays(fleet)
    margins = activation_margins(fa, leader, leader_gap, params, road, cav_params)
    return build_regions_arrays(fa, margins, road, params, cav_params.b_pl)


def apl_step(
    fa: _FleetArrays,
    leader: np.ndarray,
    leader_gap: np.ndarray,
    y_pl_static: np.ndarray,
    speed_range: FleetSpeedRange,
    road: RoadGeometry,
    params: AplParams,
    cav_params: CavParams,
) -> np.ndarray:
    """Effective line per vehicle for this snapshot (HDV entries unused)."""
    margins = activation_margins(fa, leader, leader_gap, params, road, cav_params)
    regions = build_regions_arrays(fa, margins, road, params, cav_params.b_pl)
    y_eff = y_pl_static.copy()
    if not regions:
        return y_eff
    for i in np.flatnonzero(~fa.is_hdv):
        for region in regions:
            if region.contains(fa.x[i], road.length_m):
                y_eff[i] = map_speed_to_intervals(
                    fa.v_des[i], speed_range, region.free_intervals
                )
                break
    return y_eff
