import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhmpc.gait import (
    DcmState,
    GaitParams,
    PendulumParams,
    dcm_of,
    integrate_lipm,
    nominal_offsets,
    step_offset_world,
)


def rk4_lipm(c, c_dot, u0, omega, duration, steps=20000):
    """Integrate c_ddot = omega^2 (c - u0) with classical RK4."""
    y = np.concatenate([c, c_dot]).astype(float)
    h = duration / steps

    def f(y):
        return np.concatenate([y[2:], omega**2 * (y[:2] - u0)])

    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y[:2], y[2:]


def test_pendulum_frequency():
    p = PendulumParams(z0=0.35, g=9.81)
    assert p.omega0 == pytest.approx(math.sqrt(9.81 / 0.35))
    with pytest.raises(ValueError):
        PendulumParams(z0=0.0)


@pytest.mark.parametrize(
    "c, c_dot, z0, expected",
    [
        ((0, 0), (0, 0), 0.35, (0, 0)),
        ((0.1, 0), (0, 0), 0.35, (0.1, 0)),
        ((0, 0.1), (0, 0.1), 9.81, (0, 0.2)),  # omega0 = 1
    ],
)
def test_dcm_of(c, c_dot, z0, expected):
    p = PendulumParams(z0=z0, g=9.81)
    np.testing.assert_allclose(dcm_of(c, c_dot, p), expected, atol=1e-15)


def test_integrate_equilibrium_and_identity():
    p = PendulumParams()
    s = DcmState.from_com([0.1, -0.2], [0, 0], p)
    for dt in (0.0, 0.05, 1.0):
        out = integrate_lipm(s, [0.1, -0.2], p, dt)
        np.testing.assert_allclose(out.c, s.c, atol=1e-15)
        np.testing.assert_allclose(out.xi, s.xi, atol=1e-15)
    moving = DcmState.from_com([0.0, 0.0], [0.3, -0.1], p)
    same = integrate_lipm(moving, [0.05, 0.02], p, 0.0)
    np.testing.assert_allclose(same.c, moving.c)
    np.testing.assert_allclose(same.c_dot, moving.c_dot)


def test_integrate_matches_rk4():
    p = PendulumParams(z0=9.81 / 25.0, g=9.81)  # omega0 = 5
    assert p.omega0 == pytest.approx(5.0)
    s = DcmState(c=np.zeros(2), c_dot=np.array([0.05, 0.0]), xi=np.array([0.01, 0.0]))
    out = integrate_lipm(s, np.zeros(2), p, 0.1)
    c_ref, cd_ref = rk4_lipm(s.c, s.c_dot, np.zeros(2), 5.0, 0.1)
    np.testing.assert_allclose(out.c, c_ref, atol=1e-9)
    np.testing.assert_allclose(out.c_dot, cd_ref, atol=1e-9)


vec2 = st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)).map(np.array)


@settings(max_examples=60, deadline=None)
@given(c=vec2, cd=vec2, u=vec2, a=st.floats(0, 0.4), b=st.floats(0, 0.4))
def test_flow_properties(c, cd, u, a, b):
    p = PendulumParams()
    s = DcmState.from_com(c, cd, p)
    one = integrate_lipm(s, u, p, a + b)
    two = integrate_lipm(integrate_lipm(s, u, p, a), u, p, b)
    np.testing.assert_allclose(one.c, two.c, atol=1e-12)
    np.testing.assert_allclose(one.xi, two.xi, atol=1e-12)
    np.testing.assert_allclose(one.xi - dcm_of(one.c, one.c_dot, p), 0.0, atol=1e-12)


def test_dcm_diverges_from_stance():
    p = PendulumParams()
    s = DcmState.from_com([0.0, 0.0], [0.1, 0.05], p)
    dist = [np.linalg.norm(integrate_lipm(s, [0.0, 0.0], p, t).xi) for t in np.linspace(0, 0.5, 30)]
    assert np.all(np.diff(dist) > 0)


def test_nominal_offsets_zero_step():
    p = PendulumParams()
    gp = GaitParams(l_nom=0.0, w_nom=0.0)
    assert nominal_offsets(gp, p, "left") == (0.0, 0.0)


@pytest.mark.parametrize("l_nom, w_nom, T_nom", [(0.1, 0.15, 0.2), (-0.05, 0.2, 0.25), (0.0, 0.1, 0.1)])
def test_nominal_offsets_fixed_point(l_nom, w_nom, T_nom):
    """Propagating a nominal step returns the offset with flipped lateral sign."""
    p = PendulumParams()
    gp = GaitParams(l_nom=l_nom, w_nom=w_nom, T_nom=T_nom)
    side = "left"
    # offset at the start of a left-stance step is the end offset of a right-stance step
    b_start = np.array(nominal_offsets(gp, p, "right"))
    u0 = np.array([0.3, -0.1])
    xi0 = u0 + b_start
    xi_T = (xi0 - u0) * math.exp(p.omega0 * T_nom) + u0
    u_T = u0 + step_offset_world(l_nom, w_nom, side)
    b_end = xi_T - u_T
    np.testing.assert_allclose(b_end, nominal_offsets(gp, p, side), atol=1e-14)
    np.testing.assert_allclose(b_end[1], -b_start[1], atol=1e-14)


def test_nominal_offset_decreases_with_step_time():
    p = PendulumParams()
    times = np.linspace(0.1, 3.0, 40)
    bx = [nominal_offsets(GaitParams(l_nom=0.1, T_nom=t, T_max=3.0), p)[0] for t in times]
    assert np.all(np.diff(bx) < 0) and 0 < bx[-1] < 1e-5


def test_gait_params_validation():
    with pytest.raises(ValueError):
        GaitParams(l_nom=0.5)
    with pytest.raises(ValueError):
        GaitParams(T_nom=0.05)
    with pytest.raises(ValueError):
        GaitParams(z_min=0.01)
