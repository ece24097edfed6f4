import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhmpc.calibration import SwingModel
from vhmpc.defaults import calibration_path
from vhmpc.gait import GaitParams, PendulumParams
from vhmpc.swing import (SwingPlan, SwingState, apex_node, first_force, horizon_nodes, interval_durations,
                         landing_feasible_lp, min_landing_time, plan_swing, rollout)

M = SwingModel.load(calibration_path())
GP = GaitParams()
OMEGA = PendulumParams().omega0


def bang_bang_time(z0, v0, lo, hi):
    """Continuous-time minimum time to reach z = zdot = 0 with lo <= zdd <= hi (one switch)."""
    best = math.inf
    for u1, u2 in ((lo, hi), (hi, lo)):
        vs2 = (v0 * v0 - 2 * u1 * z0) / (1 - u1 / u2)
        if vs2 < 0:
            continue
        vs = -math.copysign(math.sqrt(vs2), u2)
        t1, t2 = (vs - v0) / u1, -vs / u2
        if t1 >= -1e-12 and t2 >= -1e-12:
            best = min(best, t1 + t2)
    return best


def symmetric_model(a=5.0):
    """Decoupled foot with a force box symmetric about the holding force."""
    h = np.array([0.0, 0.0, 0.5 * 9.81])
    return SwingModel(Lambda=0.5 * np.eye(3), h_c=h, f_min=h - 0.5 * a, f_max=h + 0.5 * a)


def test_bang_bang_oracle_self_check():
    # rest-to-rest from height z under symmetric bounds: 2 sqrt(z / a)
    assert bang_bang_time(0.03, 0.0, -5.0, 5.0) == pytest.approx(2 * math.sqrt(0.03 / 5.0), rel=1e-12)
    # already moving down at the braking limit: pure braking
    v = -math.sqrt(2 * 5.0 * 0.03)
    assert bang_bang_time(0.03, v, -5.0, 5.0) == pytest.approx(-v / 5.0, rel=1e-9)


def test_rest_drop_within_one_period_of_bang_bang():
    m = symmetric_model()
    lo, hi = m.vertical_accel_range()
    assert lo == pytest.approx(-5.0) and hi == pytest.approx(5.0)
    lt = min_landing_time(SwingState([0, 0, 0.03], [0, 0, 0]), m, OMEGA)
    assert abs(lt.T0 - bang_bang_time(0.03, 0.0, lo, hi)) <= m.dt
    assert lt.Gamma0 == pytest.approx(math.exp(OMEGA * lt.T0))


def test_discrete_minimum_never_beats_continuous():
    """Held forces are a subset of measurable controls, so T0 >= T* always."""
    lo, hi = M.vertical_accel_range()
    rng = np.random.default_rng(10)
    for _ in range(300):
        z0, v0 = rng.uniform(0, GP.z_max), rng.uniform(-1.5, 1.5)
        lt = min_landing_time(SwingState([0, 0, z0], [0, 0, v0]), M, OMEGA, n_max=60)
        assert not lt.at_cap
        assert lt.T0 >= bang_bang_time(z0, v0, lo, hi) - 1e-9


def test_search_methods_and_lp_agree():
    rng = np.random.default_rng(11)
    for _ in range(60):
        s = SwingState(rng.normal(scale=0.05, size=3) + [0, 0, 0.04], rng.normal(scale=0.6, size=3))
        a = min_landing_time(s, M, OMEGA, n_max=40)
        b = min_landing_time(s, M, OMEGA, n_max=40, method="bisection")
        assert (a.nodes, a.at_cap) == (b.nodes, b.at_cap)
        if a.nodes > 0 and not a.at_cap:
            assert landing_feasible_lp(s, M, a.nodes)
            assert not landing_feasible_lp(s, M, a.nodes - 1)


def test_min_time_edge_cases():
    on_ground = min_landing_time(SwingState([0.1, 0, 0], [0.3, 0, 0]), M, OMEGA)
    assert on_ground.nodes == 0 and on_ground.Gamma0 == 1.0
    # far above ground: search exhausts the cap
    lt = min_landing_time(SwingState([0, 0, 5.0], [0, 0, 3.0]), M, OMEGA, n_max=5)
    assert lt.at_cap and lt.nodes == 5
    # ground offset shifts the problem
    a = min_landing_time(SwingState([0, 0, 0.07], [0, 0, 0]), M, OMEGA, ground=0.04)
    b = min_landing_time(SwingState([0, 0, 0.03], [0, 0, 0]), M, OMEGA)
    assert a.nodes == b.nodes
    with pytest.raises(ValueError):
        min_landing_time(SwingState([0, 0, 0.03], [0, 0, 0]), M, OMEGA, method="guess")


def test_min_time_is_fast():
    rng = np.random.default_rng(12)
    states = [SwingState([0, 0, rng.uniform(0, 0.1)], [0, 0, rng.uniform(-1, 1)]) for _ in range(200)]
    worst = 0.0
    for s in states:
        t0 = time.perf_counter()
        min_landing_time(s, M, OMEGA)
        worst = max(worst, time.perf_counter() - t0)
    assert worst < 1e-3


def test_rollout_matches_matrix_recursion():
    rng = np.random.default_rng(13)
    s = SwingState(rng.normal(size=3), rng.normal(size=3))
    forces = rng.uniform(M.f_min, M.f_max, size=(7, 3))
    pred = rollout(s, forces, M)
    x = s.stacked()
    for k, f in enumerate(forces):
        x = M.A_d @ x + M.B_d @ M.acceleration(f)
        np.testing.assert_allclose(pred[k + 1], x, atol=1e-12)


def random_swing_problem(rng):
    s = SwingState([rng.uniform(-0.15, 0.0), rng.uniform(-0.15, -0.05), rng.uniform(0.0, 0.06)],
                   [rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.5)])
    target = np.array([rng.uniform(0.0, 0.2), rng.uniform(-0.2, -0.05), 0.0])
    T = rng.uniform(0.15, 0.3)
    t = rng.uniform(0.0, 0.6 * T)
    return s, target, t, T


def test_terminal_constraints_and_corridor():
    rng = np.random.default_rng(14)
    n = 0
    for _ in range(100):
        s, target, t, T = random_swing_problem(rng)
        N, last = horizon_nodes(t, T, M.dt)
        lt = min_landing_time(s, M, OMEGA)
        if N < max(lt.nodes, 1):
            continue
        plan = plan_swing(s, target, N, M, GP, t=t, T=T, last_dt=last)
        n += 1
        assert plan.fallback == ""
        assert abs(plan.terminal[2]) < 1e-8 and abs(plan.terminal[5]) < 1e-8
        assert np.all(plan.predicted[1:, 2] >= GP.z_min - 1e-9)
        assert np.all(plan.predicted[1:, 2] <= GP.z_max + 1e-9)
        assert np.all(plan.forces >= M.f_min - 1e-9) and np.all(plan.forces <= M.f_max + 1e-9)
        assert plan.kkt_residual < 1e-8
        np.testing.assert_allclose(plan.predicted, rollout(s, plan.forces, M, plan.durations), atol=1e-12)
    assert n > 50


def test_replanning_follows_the_tail():
    """Stage-additive cost: the tail of an optimal plan solves the shifted problem."""
    s = SwingState([-0.1, -0.12, 0.0], [0.0, 0.0, 0.2])
    target = np.array([0.1, -0.1, 0.0])
    T, t = 0.26, 0.0
    N, last = horizon_nodes(t, T, M.dt)
    plan = plan_swing(s, target, N, M, GP, t=t, T=T, last_dt=last)
    for k in range(1, 4):
        nxt = SwingState(plan.predicted[k, :3], plan.predicted[k, 3:])
        N2, last2 = horizon_nodes(t + k * M.dt, T, M.dt)
        assert N2 == N - k and last2 == pytest.approx(last)
        again = plan_swing(nxt, target, N2, M, GP, t=t + k * M.dt, T=T, last_dt=last2)
        np.testing.assert_allclose(again.forces, plan.forces[k:], atol=1e-6)


def test_equilibrium_with_zero_holding_force_needs_no_force():
    m = SwingModel(Lambda=0.4 * np.eye(3), h_c=np.zeros(3), f_min=-np.ones(3), f_max=np.ones(3))
    target = np.array([0.1, -0.1, 0.0])
    s = SwingState(target, np.zeros(3))
    plan = plan_swing(s, target, 6, m, GP, t=0.2, T=0.25)  # past mid-step, so no apex term
    np.testing.assert_allclose(plan.forces, 0.0, atol=1e-9)
    np.testing.assert_array_equal(first_force(plan), plan.forces[0])


def test_zero_horizon_returns_empty_plan():
    s = SwingState([0, 0, 0], [0, 0, 0])
    plan = plan_swing(s, [0.1, 0, 0], 0, M, GP)
    assert plan.N == 0 and plan.forces.shape == (0, 3)
    np.testing.assert_array_equal(first_force(plan), np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(T=st.floats(0.05, 0.5), frac=st.floats(0.0, 1.2))
def test_horizon_nodes_land_exactly_at_T(T, frac):
    t = frac * T
    N, last = horizon_nodes(t, T, M.dt)
    if N == 0:
        assert T - t < 0.5 * M.dt + 1e-12
        return
    d = interval_durations(N, M.dt, last)
    assert t + d.sum() == pytest.approx(T, abs=1e-12)
    assert 0.5 * M.dt - 1e-12 <= last <= 1.5 * M.dt + 1e-12


def test_apex_node_selection():
    d = interval_durations(20, 0.01)
    assert apex_node(0.0, 0.2, d) == 10
    assert apex_node(0.11, 0.2, d) is None
    assert apex_node(0.0, None, d) is None
    assert apex_node(0.098, 0.2, d) is None  # the current instant is closest


def test_infeasible_problem_uses_shifted_previous_plan():
    s = SwingState([-0.1, -0.12, 0.0], [0.0, 0.0, 0.2])
    target = np.array([0.1, -0.1, 0.0])
    prev = plan_swing(s, target, 20, M, GP, t=0.0, T=0.2)
    # 2 nodes cannot stop a foot 6 cm up moving upwards
    high = SwingState([0, -0.1, 0.06], [0, 0, 0.5])
    plan = plan_swing(high, target, 2, M, GP, t=0.18, T=0.2, prev=prev)
    assert plan.fallback == "shifted" and plan.N == 19
    np.testing.assert_array_equal(plan.forces, prev.forces[1:])


def test_fallback_chain_without_previous_plan():
    target = np.array([0.1, -0.1, 0.0])
    # a fast upward foot must overshoot the ceiling before it can come back down
    up = SwingState([0, -0.1, 0.09], [0, 0, 6.0])
    N = min_landing_time(up, M, OMEGA).nodes + 3
    plan = plan_swing(up, target, N, M, GP, t=0.2, T=0.2 + N * M.dt)
    assert plan.fallback == "no_corridor"
    assert plan.predicted[:, 2].max() > GP.z_max
    assert abs(plan.terminal[2]) < 1e-8 and abs(plan.terminal[5]) < 1e-8
    high = SwingState([0, -0.1, 0.06], [0, 0, 0.5])
    soft = plan_swing(high, target, 2, M, GP, t=0.18, T=0.2)
    assert soft.fallback == "soft_terminal"
    assert np.all(soft.forces >= M.f_min - 1e-9) and np.all(soft.forces <= M.f_max + 1e-9)


def test_shifted_plan_keeps_consistency():
    s = SwingState([-0.1, -0.12, 0.0], [0.0, 0.0, 0.2])
    plan = plan_swing(s, [0.1, -0.1, 0.0], 20, M, GP, t=0.0, T=0.2)
    sh = plan.shifted()
    assert isinstance(sh, SwingPlan) and sh.N == 19 and sh.apex_node == plan.apex_node - 1
    np.testing.assert_array_equal(sh.predicted, plan.predicted[1:])


def test_twenty_node_plan_is_fast():
    s = SwingState([-0.1, -0.12, 0.0], [0.0, 0.0, 0.2])
    plan_swing(s, [0.1, -0.1, 0.0], 20, M, GP, t=0.0, T=0.2)
    t0 = time.perf_counter()
    for _ in range(5):
        plan_swing(s, [0.1, -0.1, 0.0], 20, M, GP, t=0.0, T=0.2)
    assert (time.perf_counter() - t0) / 5 < 0.01
