import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhmpc.baseline import BaselineError, PolySegment, corridor_samples, min_jerk_horizontal, vertical_qp
from vhmpc.gait import GaitParams

GP = GaitParams()
finite = st.floats(-2.0, 2.0)


def boundary_system(T):
    """Rows: p, v, a at t = 0 then at t = T, for a cubic-to-quintic in plain time."""
    rows = []
    for t in (0.0, T):
        rows.append([t**k for k in range(6)])
        rows.append([k * t ** (k - 1) if k >= 1 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * t ** (k - 2) if k >= 2 else 0.0 for k in range(6)])
    return np.array(rows)


@settings(max_examples=100, deadline=None)
@given(p0=finite, v0=finite, a0=st.floats(-20, 20), pf=finite, T=st.floats(0.02, 0.5))
def test_min_jerk_matches_linear_solve(p0, v0, a0, pf, T):
    seg = min_jerk_horizontal(p0, v0, a0, pf, T, t_start=1.0)
    c = np.linalg.solve(boundary_system(T), [p0, v0, a0, pf, 0.0, 0.0])
    for t in np.linspace(0.0, T, 7):
        assert seg.evaluate(1.0 + t) == pytest.approx(np.polyval(c[::-1], t), abs=1e-9)
    # exact interpolation in the stored normalized time s = (t - t_start) / T
    c = seg.coeffs
    d1, d2 = np.polynomial.polynomial.polyder(c), np.polynomial.polynomial.polyder(c, 2)
    ends = [np.polynomial.polynomial.polyval(s, k) for s in (0.0, 1.0) for k in (c, d1, d2)]
    np.testing.assert_allclose(ends, [p0, v0 * T, a0 * T * T, pf, 0.0, 0.0], rtol=0, atol=1e-10)
    # physical units, relative to the acceleration scale of the segment
    scale = max(1.0, abs(a0), (abs(p0 - pf) + abs(v0) * T) / T**2)
    np.testing.assert_allclose(seg.state(1.0 + T), [pf, 0.0, 0.0], atol=1e-12 * scale)


def test_rest_to_rest_is_constant():
    seg = min_jerk_horizontal(0.3, 0.0, 0.0, 0.3, 0.2)
    np.testing.assert_allclose(seg.coeffs, [0.3, 0, 0, 0, 0, 0], atol=1e-15)


def test_segment_holds_end_state_and_validates():
    seg = min_jerk_horizontal(0.0, 0.5, 0.0, 0.1, 0.2)
    assert seg.evaluate(0.5) == pytest.approx(0.1)
    assert seg.evaluate(0.5, 1) == 0.0
    with pytest.raises(ValueError):
        min_jerk_horizontal(0.0, 0.0, 0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        PolySegment(np.zeros(6), 1.0, 1.0)


def test_corridor_samples_are_control_instants_before_landing():
    s = corridor_samples(0.2)
    np.testing.assert_allclose(s * 0.2, np.arange(1, 20) * 0.01, atol=1e-12)
    assert len(corridor_samples(0.005)) == 0


def test_nominal_vertical_step():
    seg = vertical_qp(0.0, 0.0, 0.0, 0.2, GP, t_mid=0.1)
    assert not seg.fallback
    np.testing.assert_allclose(seg.state(0.0), [0, 0, 0], atol=1e-12)
    assert abs(seg.evaluate(0.2)) < 1e-10 and abs(seg.evaluate(0.2, 1)) < 1e-10
    assert seg.evaluate(0.1) == pytest.approx(GP.z_mid, abs=1e-3)
    assert np.max(seg.evaluate(np.linspace(0, 0.2, 201))) <= GP.z_max + 1e-6


def test_sampled_corridor_holds_under_dense_evaluation():
    rng = np.random.default_rng(20)
    worst = 0.0
    checked = 0
    for _ in range(200):
        z0, zd0, zdd0 = rng.uniform(0, 0.08), rng.uniform(-0.5, 0.5), rng.uniform(-5, 5)
        T = rng.uniform(0.05, 0.3)
        try:
            seg = vertical_qp(z0, zd0, zdd0, T, GP, t_mid=0.5 * T)
        except BaselineError:
            continue
        checked += 1
        t = np.arange(0.0, T + 1e-12, 1e-3)
        z = seg.evaluate(t)
        worst = max(worst, np.max(z - GP.z_max), np.max(GP.z_min - z))
    assert checked > 150
    assert worst <= 1e-6


def test_infeasible_update_keeps_previous_segment():
    prev = vertical_qp(0.0, 0.0, 0.0, 0.2, GP, t_mid=0.1)
    # foot high and rising fast with 50 ms left: no quintic lands inside the corridor
    seg = vertical_qp(0.09, 5.0, 0.0, 0.05, GP, prev=prev, t_start=0.15)
    assert seg.fallback
    np.testing.assert_array_equal(seg.coeffs, prev.coeffs)
    assert (seg.t_start, seg.t_end) == (prev.t_start, prev.t_end)
    # evaluating the kept segment one sample later continues the old path without a jump
    assert seg.evaluate(0.16) == pytest.approx(prev.evaluate(0.16))
    with pytest.raises(BaselineError):
        vertical_qp(0.09, 5.0, 0.0, 0.05, GP)


def test_vertical_rejects_bad_duration():
    with pytest.raises(ValueError):
        vertical_qp(0.0, 0.0, 0.0, -0.1, GP)
