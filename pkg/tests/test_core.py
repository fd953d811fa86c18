"""Ring geometry and overlap predicate tests; oracles are direct arithmetic."""

import numpy as np
import pytest

from lanefree.core import (
    RoadGeometry,
    SimConfig,
    VehicleClass,
    VehicleSpec,
    bodies_collide,
    forward_gap,
    lateral_overlap,
    signed_offset,
    wrap_position,
)

from conftest import veh


class TestForwardGap:
    def test_direct(self, road):
        # oracle: (leader back) - (follower front) = (10 - 2) - (0 + 2)
        f = veh(0, 0.0, 5.0, length=4.0)
        l = veh(1, 10.0, 5.0, length=4.0)
        expected = (10.0 - 2.0) - (0.0 + 2.0)
        assert forward_gap(*f, *l, road) == pytest.approx(expected, rel=1e-9)
        assert expected == 6.0

    def test_wraparound(self, road):
        # oracle: ((4 - 2) - (998 + 2)) mod 1000 = 2
        f = veh(0, 998.0, 5.0, length=4.0)
        l = veh(1, 4.0, 5.0, length=4.0)
        expected = ((4.0 - 2.0) - (998.0 + 2.0)) % 1000.0
        assert forward_gap(*f, *l, road) == pytest.approx(expected, rel=1e-9)
        assert expected == 2.0

    def test_bumper_contact(self, road):
        f = veh(0, 0.0, 5.0, length=4.0)
        l = veh(1, 4.0, 5.0, length=4.0)
        assert forward_gap(*f, *l, road) == 0.0

    def test_antisymmetric_on_ring(self, road):
        # gap(a,b) + gap(b,a) + len_a + len_b == ring length
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 200:
            xa, xb = rng.uniform(0, road.length_m, 2)
            la, lb = rng.uniform(3, 6, 2)
            d = abs((xb - xa + 500.0) % 1000.0 - 500.0)
            if d < 0.5 * (la + lb):
                continue  # overlapping bodies: gaps are undefined
            a = veh(0, xa, 5.0, length=la)
            b = veh(1, xb, 5.0, length=lb)
            total = forward_gap(*a, *b, road) + forward_gap(*b, *a, road) + la + lb
            assert total == pytest.approx(road.length_m, rel=1e-9)
            checked += 1

    def test_result_in_range(self, road):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a = veh(0, rng.uniform(0, 1000), 5.0)
            b = veh(1, rng.uniform(0, 1000), 5.0)
            g = forward_gap(*a, *b, road)
            assert 0.0 <= g < road.length_m


class TestLateralOverlap:
    def test_identical_centers(self):
        a = veh(0, 0, 5.0, width=1.6)
        b = veh(1, 10, 5.0, width=1.88)
        assert lateral_overlap(*a, *b)

    def test_disjoint(self):
        # oracle: intervals [1.2, 2.8] and [3.2, 4.8] do not intersect
        a = veh(0, 0, 2.0, width=1.6)
        b = veh(1, 10, 4.0, width=1.6)
        assert (2.0 + 0.8) < (4.0 - 0.8)
        assert not lateral_overlap(*a, *b)

    def test_touching_edges_not_overlap(self):
        a = veh(0, 0, 2.0, width=2.0)
        b = veh(1, 10, 4.0, width=2.0)
        assert not lateral_overlap(*a, *b)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = veh(0, 0, rng.uniform(0, 10), width=rng.uniform(1, 2))
            b = veh(1, 5, rng.uniform(0, 10), width=rng.uniform(1, 2))
            assert lateral_overlap(*a, *b) == lateral_overlap(*b, *a)


def test_wrap_position(road):
    assert wrap_position(1234.5, road) == pytest.approx(234.5)
    assert wrap_position(-0.5, road) == pytest.approx(999.5)
    assert 0.0 <= wrap_position(1000.0, road) < 1000.0


def test_signed_offset(road):
    assert signed_offset(0.0, 10.0, road) == pytest.approx(10.0)
    assert signed_offset(10.0, 0.0, road) == pytest.approx(-10.0)
    assert signed_offset(990.0, 10.0, road) == pytest.approx(20.0)
    assert signed_offset(0.0, 500.0, road) == pytest.approx(500.0)


def test_bodies_collide(road):
    a = veh(0, 0.0, 5.0, length=4.0, width=1.6)
    assert bodies_collide(*a, *veh(1, 3.0, 5.0, length=4.0, width=1.6), road)
    assert not bodies_collide(*a, *veh(1, 5.0, 5.0, length=4.0, width=1.6), road)
    assert not bodies_collide(*a, *veh(1, 3.0, 7.0, length=4.0, width=1.6), road)
    # wraparound pair
    assert bodies_collide(
        *veh(0, 999.0, 5.0), *veh(1, 1.0, 5.0), road
    )


class TestValidation:
    def test_road(self):
        with pytest.raises(ValueError):
            RoadGeometry(length_m=-1)
        with pytest.raises(ValueError):
            RoadGeometry(y_right=5.0, y_left=5.0)

    def test_vehicle_spec(self):
        with pytest.raises(ValueError):
            VehicleSpec(0, VehicleClass.CAV, -1.0, 1.6, 30.0, 0.5)
        with pytest.raises(ValueError):
            VehicleSpec(0, VehicleClass.CAV, 4.0, 1.6, 0.0, 0.5)

    def test_sim_config(self):
        with pytest.raises(ValueError):
            SimConfig(density_veh_km=-5, hdv_rate=0.0, seed=1)
        with pytest.raises(ValueError):
            SimConfig(density_veh_km=100, hdv_rate=1.5, seed=1)
        with pytest.raises(ValueError):
            SimConfig(density_veh_km=100, hdv_rate=0.0, seed=1, controller="xx")
        cfg = SimConfig(density_veh_km=100, hdv_rate=0.0, seed=1)
        assert cfg.n_steps == 14400
