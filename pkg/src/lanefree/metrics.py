"""Run metrics: flow, speeds, lateral activity, TTC, comfort, space-time grid.

Pure functions operate on plain arrays; ``MetricsCollector`` accumulates the
same quantities online during a run (order-independent sums and counts only)
so full-length runs never retain per-step streams unless asked to.

Flow, speeds, lateral speeds and comfort spreads exclude a warm-up window;
TTC percentages cover the whole run including the initialization transient
(the conservative choice).  Collision and boundary audits always cover the
whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as _k
from .core import RoadGeometry, VehicleSpec, VehicleState

TTC_THRESHOLDS = (1.5, 3.0)


def ttc(
    f_spec: VehicleSpec,
    f_state: VehicleState,
    l_spec: VehicleSpec,
    l_state: VehicleState,
    road: RoadGeometry,
) -> Optional[float]:
    """Time to collision against the current leader; None when not closing."""
    gap = _k.ring_forward_gap(
        f_state.x, f_spec.length_m, l_state.x, l_spec.length_m, road.length_m
    )
    dv = f_state.vx - l_state.vx
    if dv <= 0.0:
        return None
    return gap / dv


def ttc_cdf(samples, threshold: float) -> Optional[float]:
    """Percentage of samples below the threshold; None for an empty set."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return None
    return 100.0 * float(np.count_nonzero(samples < threshold)) / samples.size


def mean_lateral_speed(vy_samples) -> float:
    """Mean of absolute lateral speeds over a sample stream."""
    vy_samples = np.asarray(vy_samples, dtype=float)
    if vy_samples.size == 0:
        return 0.0
    return float(np.mean(np.abs(vy_samples)))


def jerk_series(accel, dt: float) -> np.ndarray:
    """Finite-difference jerk from consecutive applied accelerations."""
    accel = np.asarray(accel, dtype=float)
    return np.diff(accel) / dt


def comfort_stats(samples, n_bins: int = 41, clip: float = 5.0):
    """(std, histogram counts, bin edges) with symmetric log-friendly bins."""
    samples = np.asarray(samples, dtype=float)
    edges = np.linspace(-clip, clip, n_bins + 1)
    if samples.size == 0:
        return None, np.zeros(n_bins, dtype=int), edges
    hist, _ = np.histogram(np.clip(samples, -clip, clip), bins=edges)
    return float(np.std(samples)), hist, edges


def spacetime_grid(
    t,
    x,
    vx,
    duration_s: float,
    length_m: float,
    t_bin_s: float = 10.0,
    x_bin_m: float = 10.0,
):
    """Mean-speed grid over (time bin, space bin); empty cells are NaN.

    Returns (mean_grid, counts) with shape (n_time_bins, n_space_bins).
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    vx = np.asarray(vx, dtype=float)
    nt = int(math.ceil(duration_s / t_bin_s))
    nx = int(math.ceil(length_m / x_bin_m))
    sums = np.zeros((nt, nx))
    counts = np.zeros((nt, nx), dtype=np.int64)
    ti = np.minimum((t / t_bin_s).astype(np.int64), nt - 1)
    xi = np.minimum((x / x_bin_m).astype(np.int64), nx - 1)
    np.add.at(sums, (ti, xi), vx)
    np.add.at(counts, (ti, xi), 1)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return mean, counts


def crossing_flow(crossings: int, window_s: float) -> float:
    """Point-detector flow: reference-point crossings scaled to veh/h."""
    if window_s <= 0:
        return 0.0
    return crossings * 3600.0 / window_s


def identity_flow(density_veh_km: float, mean_speed_m_s: float) -> float:
    """Cross-check flow from the fundamental identity q = k * v."""
    return density_veh_km * mean_speed_m_s * 3.6


@dataclass
class MetricsFrame:
    """Per-run aggregates; None marks quantities with no samples."""

    flow_veh_h: float
    flow_density_speed_veh_h: float
    mean_speed_m_s: Optional[float]
    mean_lat_speed_cav: Optional[float]
    mean_lat_speed_hdv: Optional[float]
    ttc_cdf_1_5_pct: Optional[float]
    ttc_cdf_3_0_pct: Optional[float]
    sigma_ax: Optional[float]
    sigma_ay: Optional[float]
    sigma_jx: Optional[float]
    sigma_jy: Optional[float]
    collisions: int
    boundary_violations: int
    comfort_limit_violations: int
    grid_mean: np.ndarray
    grid_counts: np.ndarray
    ttc_total_samples: int
    ttc_samples: Optional[np.ndarray] = None


class _MeanVar:
    __slots__ = ("n", "s", "s2")

    def __init__(self):
        self.n = 0
        self.s = 0.0
        self.s2 = 0.0

    def add(self, values: np.ndarray):
        self.n += values.size
        self.s += float(values.sum())
        self.s2 += float((values * values).sum())

    def std(self) -> Optional[float]:
        if self.n == 0:
            return None
        m = self.s / self.n
        return math.sqrt(max(0.0, self.s2 / self.n - m * m))


class MetricsCollector:
    """Online accumulator fed once per step by the engine."""

    def __init__(
        self,
        road: RoadGeometry,
        n_vehicles: int,
        duration_s: float,
        warmup_s: float,
        dt_s: float,
        is_hdv: np.ndarray,
        t_bin_s: float = 10.0,
        x_bin_m: float = 10.0,
        retain_ttc_samples: bool = False,
    ):
        self.road = road
        self.n = n_vehicles
        self.duration_s = duration_s
        self.warmup_s = warmup_s
        self.dt = dt_s
        self.is_hdv = is_hdv
        self.is_cav = ~is_hdv
        self.t_bin_s = t_bin_s
        self.x_bin_m = x_bin_m
        nt = int(math.ceil(duration_s / t_bin_s)) if duration_s > 0 else 1
        nx = int(math.ceil(road.length_m / x_bin_m))
        self.grid_sum = np.zeros((nt, nx))
        self.grid_count = np.zeros((nt, nx), dtype=np.int64)
        self.crossings = 0
        self.speed_sum = 0.0
        self.speed_n = 0
        self.lat_sum = {"cav": 0.0, "hdv": 0.0}
        self.lat_n = {"cav": 0, "hdv": 0}
        self.ttc_below = {thr: 0 for thr in TTC_THRESHOLDS}
        self.ttc_total = 0
        self.ttc_samples: Optional[list] = [] if retain_ttc_samples else None
        self.acc_x = _MeanVar()
        self.acc_y = _MeanVar()
        self.jerk_x = _MeanVar()
        self.jerk_y = _MeanVar()
        self.collisions = 0
        self.boundary_violations = 0
        self.comfort_limit_violations = 0

    def record_ttc(self, leader: np.ndarray, gap: np.ndarray, vx: np.ndarray):
        """Sample TTC for every vehicle with a leader (pre-integration snapshot)."""
        has = leader >= 0
        if not has.any():
            return
        idx = np.flatnonzero(has)
        dv = vx[idx] - vx[leader[idx]]
        closing = dv > 0.0
        if not closing.any():
            return
        samples = gap[idx[closing]] / dv[closing]
        for thr in TTC_THRESHOLDS:
            self.ttc_below[thr] += int(np.count_nonzero(samples < thr))
        self.ttc_total += samples.size
        if self.ttc_samples is not None:
            self.ttc_samples.extend(samples.tolist())

    def record_step(
        self,
        t_end: float,
        x_old: np.ndarray,
        x_new: np.ndarray,
        vx_new: np.ndarray,
        vy_eff: np.ndarray,
        ax: np.ndarray,
        ay: np.ndarray,
        prev_ax: np.ndarray,
        prev_ay: np.ndarray,
        limits: Optional[tuple] = None,
    ):
        """Post-integration accounting for one step."""
        # space-time grid covers the whole run
        nt = self.grid_sum.shape[0]
        ti = min(int((t_end - 1e-9) / self.t_bin_s), nt - 1)
        xi = np.minimum(
            (x_new / self.x_bin_m).astype(np.int64), self.grid_sum.shape[1] - 1
        )
        np.add.at(self.grid_sum[ti], xi, vx_new)
        np.add.at(self.grid_count[ti], xi, 1)

        if t_end <= self.warmup_s:
            return
        self.crossings += int(np.count_nonzero(x_new < x_old))
        self.speed_sum += float(vx_new.sum())
        self.speed_n += vx_new.size
        for name, mask in (("cav", self.is_cav), ("hdv", self.is_hdv)):
            if mask.any():
                self.lat_sum[name] += float(np.abs(vy_eff[mask]).sum())
                self.lat_n[name] += int(np.count_nonzero(mask))
        if self.is_cav.any():
            cav = self.is_cav
            jx = (ax[cav] - prev_ax[cav]) / self.dt
            jy = (ay[cav] - prev_ay[cav]) / self.dt
            self.acc_x.add(ax[cav])
            self.acc_y.add(ay[cav])
            self.jerk_x.add(jx)
            self.jerk_y.add(jy)
            if limits is not None:
                ax_min, ax_max, ay_min, ay_max, j_min, j_max = limits
                tol = 1e-9
                bad = (
                    np.count_nonzero((ax[cav] < ax_min - tol) | (ax[cav] > ax_max + tol))
                    + np.count_nonzero(
                        (ay[cav] < ay_min - tol) | (ay[cav] > ay_max + tol)
                    )
                    + np.count_nonzero((jx < j_min - tol) | (jx > j_max + tol))
                    + np.count_nonzero((jy < j_min - tol) | (jy > j_max + tol))
                )
                self.comfort_limit_violations += int(bad)

    def record_audit(self, collisions: int, boundary_violations: int):
        self.collisions += collisions
        self.boundary_violations += boundary_violations

    def finalize(self, density_veh_km: float) -> MetricsFrame:
        window = self.duration_s - self.warmup_s
        mean_speed = self.speed_sum / self.speed_n if self.speed_n else None
        flow = crossing_flow(self.crossings, window)
        flow_id = identity_flow(density_veh_km, mean_speed or 0.0)
        with np.errstate(invalid="ignore"):
            grid_mean = np.where(
                self.grid_count > 0,
                self.grid_sum / np.maximum(self.grid_count, 1),
                np.nan,
            )
        def lat(name):
            return self.lat_sum[name] / self.lat_n[name] if self.lat_n[name] else None

        def pct(thr):
            if self.ttc_total == 0:
                return None
            return 100.0 * self.ttc_below[thr] / self.ttc_total

        return MetricsFrame(
            flow_veh_h=flow,
            flow_density_speed_veh_h=flow_id,
            mean_speed_m_s=mean_speed,
            mean_lat_speed_cav=lat("cav"),
            mean_lat_speed_hdv=lat("hdv"),
            ttc_cdf_1_5_pct=pct(1.5),
            ttc_cdf_3_0_pct=pct(3.0),
            sigma_ax=self.acc_x.std(),
            sigma_ay=self.acc_y.std(),
            sigma_jx=self.jerk_x.std(),
            sigma_jy=self.jerk_y.std(),
            collisions=self.collisions,
            boundary_violations=self.boundary_violations,
            comfort_limit_violations=self.comfort_limit_violations,
            grid_mean=grid_mean,
            grid_counts=self.grid_count,
            ttc_total_samples=self.ttc_total,
            ttc_samples=(
                np.array(self.ttc_samples) if self.ttc_samples is not None else None
            ),
        )
