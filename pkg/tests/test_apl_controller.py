"""Corridor construction and activation strategy tests."""

import numpy as np
import pytest

from lanefree.apl_controller import (
    AplParams,
    _fleet_arrays,
    activation_margins,
    apl_step,
    build_regions_arrays,
    effective_pl,
    map_speed_to_intervals,
    surrounding_speed,
)
from lanefree.core import RoadGeometry
from lanefree.pl_controller import CavParams, FleetSpeedRange, assign_pl, cav_leader

from conftest import cav, hdv

CAV_PARAMS = CavParams()
RANGE = FleetSpeedRange(25.0, 35.0)


def leaders_for(fleet, road):
    """Reference leader arrays (lateral-overlap rule) for margin search."""
    n = len(fleet)
    leader = np.full(n, -1, dtype=np.int64)
    gap = np.full(n, np.inf)
    by_id = {s.id: k for k, (s, _) in enumerate(fleet)}
    from lanefree.core import forward_gap

    for k, sub in enumerate(fleet):
        lid = cav_leader(sub, fleet, CAV_PARAMS, road)
        if lid is not None:
            j = by_id[lid]
            leader[k] = j
            gap[k] = forward_gap(*sub, *fleet[j], road)
    return leader, gap


class TestSurroundingSpeed:
    def test_mean(self, road):
        subject = hdv(0, 100.0, 5.0, vx=10.0, length=4.0)
        a = hdv(1, 100.0 - 4.0 - 5.0 - 2.0, 2.0, vx=20.0, length=4.0)   # gap 5
        b = hdv(2, 100.0 - 4.0 - 15.0 - 2.0, 8.0, vx=24.0, length=4.0)  # gap 15
        got = surrounding_speed(subject, [subject, a, b], AplParams(), road)
        assert got == pytest.approx(22.0, rel=1e-12)

    def test_overlapping_excluded(self, road):
        subject = hdv(0, 100.0, 5.0, vx=10.0, width=1.6)
        follower = hdv(1, 90.0, 5.5, vx=20.0, width=1.6)  # laterally overlaps
        got = surrounding_speed(subject, [subject, follower], AplParams(), road)
        assert got is None

    def test_empty_window(self, road):
        subject = hdv(0, 100.0, 5.0, vx=10.0)
        far = hdv(1, 50.0, 2.0, vx=20.0)  # 40+ m behind
        assert surrounding_speed(subject, [subject, far], AplParams(), road) is None


def margins_for(fleet, road, strategy):
    fa = _fleet_arrays(fleet)
    leader, gap = leaders_for(fleet, road)
    params = AplParams(strategy=strategy)
    return activation_margins(fa, leader, gap, params, road, CAV_PARAMS)


class TestActivationMargins:
    def test_cm_unconditional(self, road):
        j = hdv(0, 100.0, 5.0, vx=30.0)
        assert margins_for([j], road, "cm") == {0: 40.0}

    def test_nscm_needs_slower_than_surroundings(self, road):
        j = hdv(0, 100.0, 5.0, vx=25.0)
        witness = hdv(1, 88.0, 2.0, vx=22.0)  # v_s = 22 < 25
        assert margins_for([j, witness], road, "nscm") == {}
        fast_witness = hdv(1, 88.0, 2.0, vx=28.0)
        assert margins_for([j, fast_witness], road, "nscm") == {0: 40.0}

    def test_fam_distance(self, road):
        # back-to-back distance oracle: gap + follower length = 8.5 + 4 = 12.5
        j = hdv(0, 100.0, 5.0, vx=10.0, length=4.0)
        follower = cav(1, 100.0 - 4.0 - 8.5, 5.0, vx=12.0, length=4.0)
        witness = cav(2, 80.0, 8.5, vx=20.0)
        margins = margins_for([j, follower, witness], road, "fam")
        assert margins == {0: pytest.approx(12.5, rel=1e-12)}

    def test_svam_speed_condition(self, road):
        from lanefree import _kernels as _k

        # follower within the (1 + eps) safe-velocity allowance: corridor forms
        j = hdv(0, 100.0, 5.0, vx=10.0, length=4.0)
        follower = cav(1, 100.0 - 4.0 - 8.5, 5.0, vx=10.5, length=4.0)
        witness = cav(2, 80.0, 8.5, vx=20.0)
        v_safe = _k.safe_velocity(10.0, 8.5, 1.5, 0.5, 2.0)
        assert follower[1].vx <= 1.05 * v_safe
        assert margins_for([j, follower, witness], road, "svam") == {
            0: pytest.approx(12.5)
        }
        # follower transiently above the allowance: corridor withheld
        slow_leader = hdv(0, 100.0, 5.0, vx=0.2, length=4.0)
        v_safe2 = _k.safe_velocity(0.2, 8.5, 1.5, 0.5, 2.0)
        fast_follower = cav(1, 100.0 - 4.0 - 8.5, 5.0, vx=12.0, length=4.0)
        assert fast_follower[1].vx > 1.05 * v_safe2
        assert margins_for([slow_leader, fast_follower, witness], road, "svam") == {}


class TestBuildRegions:
    def test_single_hdv_intervals(self, road):
        # interval-subtraction oracle: road [0.94, 9.26] minus
        # [5.1 - 0.85 - 0.94, 5.1 + 0.85 + 0.94] = [3.31, 6.89]
        j = hdv(0, 100.0, 5.1, width=1.7, length=4.0)
        fa = _fleet_arrays([j])
        regions = build_regions_arrays(
            fa, {0: 40.0}, road, AplParams(), edge_margin=0.94
        )
        assert len(regions) == 1
        ivs = regions[0].free_intervals
        assert ivs[0] == (pytest.approx(0.94), pytest.approx(3.31))
        assert ivs[1] == (pytest.approx(6.89), pytest.approx(9.26))
        # region spans [back - margin, front]
        assert regions[0].x_low == pytest.approx((100.0 - 2.0 - 40.0) % 1000.0)
        assert regions[0].x_high == pytest.approx(102.0)

    def test_overlapping_merge(self, road):
        a = hdv(0, 100.0, 2.0, length=4.0)
        b = hdv(1, 110.0, 8.2, length=4.0)
        fa = _fleet_arrays([a, b])
        regions = build_regions_arrays(
            fa, {0: 40.0, 1: 40.0}, road, AplParams(), edge_margin=0.94
        )
        assert len(regions) == 1
        assert sorted(regions[0].blocking_hdvs) == [0, 1]

    def test_narrow_gap_discarded(self, road):
        # two HDVs side by side, lateral gap 1.5 < 2 * 0.94
        a = hdv(0, 100.0, 4.7, width=1.6, length=4.0)
        b = hdv(1, 100.0, 4.7 + 1.6 + 1.5, width=1.6, length=4.0)
        fa = _fleet_arrays([a, b])
        regions = build_regions_arrays(
            fa, {0: 40.0, 1: 40.0}, road, AplParams(), edge_margin=0.94
        )
        widths = [hi - lo for lo, hi in regions[0].free_intervals]
        # the 1.5 m body gap shrinks to nothing after the side margins
        assert all(w >= 2 * 0.94 for w in widths)
        assert len(regions[0].free_intervals) == 1
        assert regions[0].free_intervals[0][1] <= 4.7 - 0.8 - 0.94 + 1e-9

    def test_wraparound_merge(self, road):
        a = hdv(0, 5.0, 2.0, length=4.0)    # region reaches back past 0
        b = hdv(1, 990.0, 8.2, length=4.0)
        fa = _fleet_arrays([a, b])
        regions = build_regions_arrays(
            fa, {0: 40.0, 1: 40.0}, road, AplParams(), edge_margin=0.94
        )
        assert len(regions) == 1
        region = regions[0]
        assert region.contains(995.0, road.length_m)
        assert region.contains(3.0, road.length_m)
        assert not region.contains(500.0, road.length_m)

    def test_merge_order_independent(self, road):
        rng = np.random.default_rng(17)
        base = [
            hdv(i, float(x), 2.0 + (i % 3) * 2.5, length=4.0)
            for i, x in enumerate(rng.uniform(0, 1000, 12))
        ]
        fa = _fleet_arrays(base)
        margins = {i: 40.0 for i in range(12)}
        ref = build_regions_arrays(fa, margins, road, AplParams(), 0.94)
        for _ in range(5):
            perm = list(margins.items())
            rng.shuffle(perm)
            got = build_regions_arrays(fa, dict(perm), road, AplParams(), 0.94)
            assert len(got) == len(ref)
            for r1, r2 in zip(ref, got):
                assert r1.x_low == pytest.approx(r2.x_low)
                assert r1.arc == pytest.approx(r2.arc)
                assert r1.blocking_hdvs == r2.blocking_hdvs

    def test_merge_idempotent(self, road):
        j = hdv(0, 100.0, 5.1, length=4.0)
        fa = _fleet_arrays([j])
        once = build_regions_arrays(fa, {0: 40.0}, road, AplParams(), 0.94)
        twice = build_regions_arrays(fa, {0: 40.0}, road, AplParams(), 0.94)
        assert once[0] == twice[0]


class TestEffectivePl:
    INTERVALS = [(0.94, 3.31), (6.89, 9.26)]

    def test_outside_regions_plain(self, road):
        sub = cav(0, 500.0, 5.0, v_des=30.0)
        got = effective_pl(sub, [], RANGE, road, CAV_PARAMS)
        assert got == pytest.approx(5.10)

    def test_min_speed_rightmost(self):
        assert map_speed_to_intervals(25.0, RANGE, self.INTERVALS) == pytest.approx(0.94)

    def test_max_speed_leftmost(self):
        assert map_speed_to_intervals(35.0, RANGE, self.INTERVALS) == pytest.approx(9.26)

    def test_boundary_maps_to_right_interval_end(self):
        # equal widths: v=30 lands exactly on the seam -> right interval end
        assert map_speed_to_intervals(30.0, RANGE, self.INTERVALS) == pytest.approx(3.31)

    def test_monotone_in_v_des(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            v1, v2 = np.sort(rng.uniform(25, 35, 2))
            y1 = map_speed_to_intervals(v1, RANGE, self.INTERVALS)
            y2 = map_speed_to_intervals(v2, RANGE, self.INTERVALS)
            assert y2 >= y1

    def test_mapped_positions_inside_intervals(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            v = rng.uniform(25, 35)
            y = map_speed_to_intervals(v, RANGE, self.INTERVALS)
            assert any(lo - 1e-12 <= y <= hi + 1e-12 for lo, hi in self.INTERVALS)


class TestAplStep:
    def test_no_hdvs_reduces_to_plain(self, road):
        fleet = [cav(i, 50.0 * i, 3.0 + i * 0.5, vx=20.0, v_des=26.0 + i) for i in range(8)]
        fa = _fleet_arrays(fleet)
        leader, gap = leaders_for(fleet, road)
        y_static = np.array(
            [assign_pl(s.v_des, RANGE, road, CAV_PARAMS) for s, _ in fleet]
        )
        for strategy in ("cm", "nscm", "fam", "svam"):
            got = apl_step(
                fa, leader, gap, y_static, RANGE, road,
                AplParams(strategy=strategy), CAV_PARAMS,
            )
            np.testing.assert_array_equal(got, y_static)

    def test_cm_remaps_at_least_as_many_as_fam(self, road):
        rng = np.random.default_rng(31)
        fleet = []
        for i in range(40):
            x = rng.uniform(0, 1000)
            y = rng.uniform(1.5, 8.7)
            if i < 8:
                fleet.append(hdv(i, x, y, vx=rng.uniform(5, 12)))
            else:
                fleet.append(cav(i, x, y, vx=rng.uniform(8, 20), v_des=rng.uniform(25, 35)))
        fa = _fleet_arrays(fleet)
        leader, gap = leaders_for(fleet, road)
        y_static = np.array(
            [assign_pl(s.v_des, RANGE, road, CAV_PARAMS) for s, _ in fleet]
        )
        counts = {}
        for strategy in ("cm", "fam"):
            got = apl_step(
                fa, leader, gap, y_static, RANGE, road,
                AplParams(strategy=strategy), CAV_PARAMS,
            )
            counts[strategy] = int((got != y_static).sum())
        assert counts["cm"] >= counts["fam"]

    def test_effective_pl_clear_of_blockers(self, road):
        rng = np.random.default_rng(37)
        fleet = []
        for i in range(30):
            x = rng.uniform(0, 1000)
            y = rng.uniform(1.5, 8.7)
            if i < 6:
                fleet.append(hdv(i, x, y, vx=5.0))
            else:
                fleet.append(cav(i, x, y, vx=10.0, v_des=rng.uniform(25, 35)))
        fa = _fleet_arrays(fleet)
        leader, gap = leaders_for(fleet, road)
        params = AplParams(strategy="cm")
        margins = {int(j): 40.0 for j in np.flatnonzero(fa.is_hdv)}
        regions = build_regions_arrays(fa, margins, road, params, CAV_PARAMS.b_pl)
        for region in regions:
            for lo, hi in region.free_intervals:
                for j in region.blocking_hdvs:
                    blocked_lo = fa.y[j] - 0.5 * fa.width[j] - params.b_apl
                    blocked_hi = fa.y[j] + 0.5 * fa.width[j] + params.b_apl
                    assert hi <= blocked_lo + 1e-9 or lo >= blocked_hi - 1e-9
