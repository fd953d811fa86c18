import numpy as np
import pytest

from lanefree.core import RoadGeometry, VehicleClass, VehicleSpec, VehicleState


@pytest.fixture
def road():
    return RoadGeometry()


def veh(
    vid,
    x,
    y,
    vx=0.0,
    vy=0.0,
    ax=0.0,
    ay=0.0,
    length=4.0,
    width=1.6,
    v_des=30.0,
    tau=1.0,
    cls=VehicleClass.HDV,
):
    """Convenience (spec, state) pair for hand-built scenarios."""
    spec = VehicleSpec(
        id=vid, vclass=cls, length_m=length, width_m=width, v_des=v_des, tau_s=tau
    )
    state = VehicleState(x=x, y=y, vx=vx, vy=vy, ax=ax, ay=ay)
    return spec, state


def cav(vid, x, y, **kw):
    kw.setdefault("tau", 0.5)
    return veh(vid, x, y, cls=VehicleClass.CAV, **kw)


def hdv(vid, x, y, **kw):
    kw.setdefault("tau", 1.5)
    return veh(vid, x, y, cls=VehicleClass.HDV, **kw)
