"""Metric operations and the online collector against direct oracles."""

import math

import numpy as np
import pytest

from lanefree.core import SimConfig
from lanefree.engine import ControllerParams, init_scenario, run, step
from lanefree.metrics import (
    MetricsCollector,
    comfort_stats,
    crossing_flow,
    identity_flow,
    jerk_series,
    mean_lateral_speed,
    spacetime_grid,
    ttc,
    ttc_cdf,
)

from conftest import cav, hdv


class TestFlow:
    def test_identity_consistency(self):
        # 200 veh/km at 23.1 m/s -> 16,632 veh/h
        assert identity_flow(200.0, 23.1) == pytest.approx(16632.0, rel=1e-9)

    def test_zero_vehicles(self):
        assert crossing_flow(0, 3000.0) == 0.0

    def test_single_vehicle_counting(self):
        # 30 m/s on a 1 km ring: 90 crossings in 50 min -> 108 veh/h
        crossings = int(30.0 * 3000.0 / 1000.0)
        assert crossing_flow(crossings, 3000.0) == pytest.approx(108.0, rel=1e-9)


class TestMeanLateralSpeed:
    def test_zeros(self):
        assert mean_lateral_speed([0.0, 0.0]) == 0.0

    def test_absolute(self):
        assert mean_lateral_speed([0.2, -0.2, 0.2]) == pytest.approx(0.2)

    def test_mixed(self):
        assert mean_lateral_speed([0.0, 0.1, -0.3]) == pytest.approx(0.13333, abs=1e-5)


class TestTtc:
    def test_definition(self, road):
        f = hdv(0, 0.0, 5.0, vx=30.0, length=4.0)
        l = hdv(1, 24.0, 5.0, vx=20.0, length=4.0)  # gap 20, closing 10
        assert ttc(*f, *l, road) == pytest.approx(2.0, rel=1e-9)

    def test_leader_faster_excluded(self, road):
        f = hdv(0, 0.0, 5.0, vx=20.0)
        l = hdv(1, 28.0, 5.0, vx=30.0)
        assert ttc(*f, *l, road) is None

    def test_equal_speeds_excluded(self, road):
        f = hdv(0, 0.0, 5.0, vx=20.0)
        l = hdv(1, 28.0, 5.0, vx=20.0)
        assert ttc(*f, *l, road) is None


class TestTtcCdf:
    def test_none_below(self):
        assert ttc_cdf([3.0, 4.0, 5.0], 1.5) == 0.0

    def test_counting(self):
        assert ttc_cdf([1.0, 2.0, 4.0], 3.0) == pytest.approx(66.6667, abs=1e-3)

    def test_empty_absent(self):
        assert ttc_cdf([], 1.5) is None

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(41)
        samples = rng.exponential(5.0, size=500)
        assert ttc_cdf(samples, 1.5) <= ttc_cdf(samples, 3.0)


class TestComfort:
    def test_constant_accel_zero_jerk(self):
        accel = np.full(100, 1.2)
        jerk = jerk_series(accel, 0.25)
        sigma, hist, _ = comfort_stats(jerk)
        assert sigma == 0.0
        assert (jerk == 0).all()

    def test_two_point_jerk(self):
        jerk = jerk_series([0.0, 1.0], 0.25)
        assert jerk.tolist() == [4.0]

    def test_sigma(self):
        samples = np.array([1.0, -1.0, 1.0, -1.0])
        sigma, _, _ = comfort_stats(samples)
        assert sigma == pytest.approx(1.0, rel=1e-9)


class TestSpacetimeGrid:
    def test_uniform_flow_constant(self):
        t = np.repeat(np.arange(0, 100, 0.25), 4)
        x = np.tile([100.0, 300.0, 500.0, 700.0], 400)
        vx = np.full_like(x, 20.0)
        grid, counts = spacetime_grid(t, x, vx, 100.0, 1000.0)
        filled = counts > 0
        assert np.allclose(grid[filled], 20.0)

    def test_single_vehicle_diagonal(self):
        # geometric oracle: x(t) = 20 t, so the filled cell column advances
        # one 10 m bin every half 10 s bin
        dt = 0.25
        t = np.arange(0, 50, dt)
        x = (20.0 * t) % 1000.0
        vx = np.full_like(t, 20.0)
        grid, counts = spacetime_grid(t, x, vx, 50.0, 1000.0)
        for ti in range(5):
            filled = np.flatnonzero(counts[ti])
            lo, hi = 20.0 * ti * 10.0 / 10.0, 20.0 * (ti + 1) * 10.0 / 10.0
            assert filled.min() == pytest.approx(math.floor(lo), abs=1)
            assert filled.max() == pytest.approx(math.ceil(hi) - 1, abs=1)

    def test_empty_cells_nan(self):
        grid, counts = spacetime_grid([0.0], [5.0], [10.0], 100.0, 1000.0)
        assert np.isnan(grid[(counts == 0)]).all()


class TestCollectorAgainstOps:
    """The online collector must agree with the pure functions on a run."""

    def test_ttc_and_speeds_match(self):
        config = SimConfig(
            density_veh_km=60, hdv_rate=0.3, seed=5, duration_s=60.0, warmup_s=10.0
        )
        params = ControllerParams()
        result = run(config, params, retain_ttc_samples=True)
        frame = result.frame
        samples = frame.ttc_samples
        assert samples is not None and samples.size == frame.ttc_total_samples
        for thr, got in ((1.5, frame.ttc_cdf_1_5_pct), (3.0, frame.ttc_cdf_3_0_pct)):
            expected = ttc_cdf(samples, thr)
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, rel=1e-12)
        assert frame.ttc_cdf_1_5_pct <= frame.ttc_cdf_3_0_pct

    def test_flow_identity_within_tolerance(self):
        # steady-state identity: crossing flow ~= density * mean speed * 3.6
        config = SimConfig(
            density_veh_km=80, hdv_rate=0.0, seed=2, duration_s=900.0, warmup_s=600.0
        )
        result = run(config)
        frame = result.frame
        assert frame.flow_veh_h == pytest.approx(
            frame.flow_density_speed_veh_h, rel=0.05
        )

    def test_grid_matches_offline(self):
        config = SimConfig(
            density_veh_km=30, hdv_rate=0.0, seed=8, duration_s=40.0, warmup_s=5.0
        )
        params = ControllerParams()
        world = init_scenario(config, params=params)
        collector = MetricsCollector(
            road=world.road,
            n_vehicles=world.n,
            duration_s=config.duration_s,
            warmup_s=config.warmup_s,
            dt_s=config.dt_s,
            is_hdv=world.is_hdv,
        )
        ts, xs, vs = [], [], []
        for k in range(config.n_steps):
            step(world, params, collector)
            t = (k + 1) * config.dt_s
            ts.extend([t] * world.n)
            xs.extend(world.x.tolist())
            vs.extend(world.vx.tolist())
        frame = collector.finalize(world.n / (world.road.length_m / 1000.0))
        grid, counts = spacetime_grid(
            np.array(ts) - 1e-9, np.array(xs), np.array(vs),
            config.duration_s, world.road.length_m,
        )
        np.testing.assert_array_equal(counts, frame.grid_counts)
        filled = counts > 0
        np.testing.assert_allclose(grid[filled], frame.grid_mean[filled], rtol=1e-12)

    def test_order_invariance_of_stats(self):
        rng = np.random.default_rng(44)
        samples = rng.normal(0, 0.3, 1000)
        s1, h1, _ = comfort_stats(samples)
        perm = rng.permutation(samples)
        s2, h2, _ = comfort_stats(perm)
        assert s1 == pytest.approx(s2, rel=1e-12)
        np.testing.assert_array_equal(np.sort(h1), np.sort(h2))
