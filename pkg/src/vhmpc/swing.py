"""Swing-foot variable-horizon MPC and the minimum landing time search.

The swing foot obeys ``f = Lambda xdd + h_c`` with a zero-order hold on the
force over each node interval. The horizon length is always supplied by the
caller (the step planner decides it); this module never changes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import SwingModel
from .gait import GaitParams
from .solver import OPTIMAL, Constraints, QpProblem, solve_lp, solve_qp

FEAS_TOL = 1e-9


@dataclass
class SwingState:
    x: np.ndarray
    x_dot: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(3)
        self.x_dot = np.asarray(self.x_dot, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.x_dot))):
            raise ValueError("swing state must be finite")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.x_dot])


@dataclass(frozen=True)
class SwingWeights:
    alpha1: float = 1e-3  # force effort
    alpha2: float = 1e3  # terminal position
    alpha3: float = 1.0  # terminal velocity
    alpha4: float = 1e2  # apex height


@dataclass
class LandingTime:
    nodes: int
    T0: float
    Gamma0: float
    at_cap: bool = False


@dataclass
class SwingPlan:
    forces: np.ndarray  # (N, 3)
    predicted: np.ndarray  # (N + 1, 6): initial state then one row per node
    N: int
    x_f_target: np.ndarray
    durations: np.ndarray | None = None  # per-interval hold times, defaults to dt
    status: str = OPTIMAL
    fallback: str = ""  # "", "shifted", "no_corridor", "soft_terminal"
    apex_node: int | None = None
    kkt_residual: float = 0.0
    iterations: int = 0

    @property
    def terminal(self) -> np.ndarray:
        return self.predicted[-1]

    def shifted(self) -> "SwingPlan":
        """The same plan advanced by one node."""
        durations = None if self.durations is None else self.durations[1:]
        return SwingPlan(forces=self.forces[1:], predicted=self.predicted[1:], N=self.N - 1,
                         x_f_target=self.x_f_target, durations=durations, status=self.status, fallback="shifted",
                         apex_node=None if self.apex_node is None else self.apex_node - 1)


def interval_durations(N: int, dt: float, last_dt: float | None = None) -> np.ndarray:
    d = np.full(N, dt)
    if N and last_dt is not None:
        d[-1] = last_dt
    return d


def rollout(s: SwingState, forces, m: SwingModel, durations=None) -> np.ndarray:
    """Exact state sequence under piecewise-constant forces."""
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    if durations is None:
        durations = np.full(len(forces), m.dt)
    out = np.zeros((len(forces) + 1, 6))
    out[0] = s.stacked()
    for i, f in enumerate(forces):
        dt = durations[i]
        a = m.acceleration(f)
        x, xd = out[i, :3], out[i, 3:]
        out[i + 1, :3] = x + dt * xd + 0.5 * dt * dt * a
        out[i + 1, 3:] = xd + dt * a
    return out


def _landing_feasible(z0, zd0, i, dt, lo, hi, tol=FEAS_TOL):
    """Exact feasibility of reaching z = zdot = 0 after ``i`` held accelerations.

    With the velocity condition fixing the accumulated acceleration, the
    position condition becomes a fractional knapsack over node weights
    ``i - j + 1/2``; its extreme values are attained by filling the budget
    from the earliest (maximum) or latest (minimum) nodes.
    """
    if i == 0:
        return abs(z0) <= tol and abs(zd0) <= tol
    total = -zd0 / dt
    span = hi - lo
    budget = total - i * lo
    if budget < -tol / dt or budget > i * span + tol / dt:
        return False
    budget = min(max(budget, 0.0), i * span)
    fill = budget / span
    F = min(int(math.floor(fill)), i)
    r = fill - F
    base = lo * i * i / 2.0
    top = F * (i + 0.5) - F * (F + 1) / 2.0 + (r * (i - F - 0.5) if F < i else 0.0)
    bottom = F * F / 2.0 + (r * (F + 0.5) if F < i else 0.0)
    target = -(z0 + i * dt * zd0) / (dt * dt)
    slack = tol / (dt * dt)
    return base + span * bottom - slack <= target <= base + span * top + slack


def landing_feasible_durations(z0, zd0, durations, lo, hi, tol=FEAS_TOL) -> bool:
    """Feasibility of landing after held accelerations over arbitrary ``durations``.

    With ``y_j = d_j a_j`` the velocity condition fixes ``sum(y)`` and the
    position condition is linear in ``y`` with weights ``T - s_j - d_j / 2``
    (time from the middle of interval ``j`` to the end), which decrease
    with ``j``. Its range is again a fractional knapsack.
    """
    d = np.asarray(durations, dtype=float)
    if not len(d):
        return abs(z0) <= tol and abs(zd0) <= tol
    T = d.sum()
    start = np.concatenate([[0.0], np.cumsum(d)[:-1]])
    c = T - start - 0.5 * d
    cap = d * (hi - lo)
    budget = -zd0 - lo * T
    if budget < -tol or budget > cap.sum() + tol:
        return False
    budget = min(max(budget, 0.0), cap.sum())
    base = lo * float(d @ c)
    target = -(z0 + T * zd0)

    def fill(order):
        used = np.minimum(np.maximum(budget - np.concatenate([[0.0], np.cumsum(cap[order])[:-1]]), 0.0), cap[order])
        return float(used @ c[order])

    top = fill(np.arange(len(d)))  # largest weights first
    bottom = fill(np.arange(len(d))[::-1])
    return base + bottom - tol <= target <= base + top + tol


def landing_feasible_lp(s: SwingState, m: SwingModel, i: int, ground: float = 0.0) -> bool:
    """The same feasibility question posed as a general LP over 3D forces."""
    if i == 0:
        return abs(s.x[2] - ground) <= FEAS_TOL and abs(s.x_dot[2]) <= FEAS_TOL
    dt = m.dt
    L = m.Lambda_inv[2]
    Gp = np.array([[dt * dt * (i - j - 0.5) for j in range(i)]])
    Gv = np.full((1, i), dt)
    A = np.vstack([np.kron(Gp, L), np.kron(Gv, L)])
    bias = L @ m.h_c
    b = np.array([
        ground - s.x[2] - i * dt * s.x_dot[2] + Gp.sum() * bias,
        -s.x_dot[2] + Gv.sum() * bias,
    ])
    cons = Constraints(3 * i, A_eq=A, b_eq=b, lb=np.tile(m.f_min, i), ub=np.tile(m.f_max, i))
    return solve_lp(np.zeros(3 * i), cons).status == OPTIMAL


def min_landing_time(s: SwingState, m: SwingModel, omega0: float, n_max: int = 30,
                     ground: float = 0.0, method: str = "incremental",
                     planned: float | None = None) -> LandingTime:
    """Fewest control periods after which the foot can rest on the ground.

    ``planned`` is the remaining time of the touchdown currently being
    tracked. The swing MPC realizes it with a stretched final interval, so
    it is generally off the control grid; when it is feasible under that
    interval structure and earlier than the grid answer, it is returned
    instead. Without it a plan landing a few microseconds after a grid
    instant would look infeasible one cycle before touchdown.
    """
    lo, hi = m.vertical_accel_range()
    z0 = s.x[2] - ground
    zd0 = s.x_dot[2]

    def feasible(i):
        return _landing_feasible(z0, zd0, i, m.dt, lo, hi)

    nodes = None
    if method == "incremental":
        for i in range(n_max + 1):
            if feasible(i):
                nodes = i
                break
    elif method == "bisection":
        if feasible(n_max):
            a, b = -1, n_max  # feasible(b) holds, a is known infeasible (or -1)
            while b - a > 1:
                mid = (a + b) // 2
                if feasible(mid):
                    b = mid
                else:
                    a = mid
            nodes = b
    else:
        raise ValueError(f"unknown search method {method!r}")
    at_cap = nodes is None
    if at_cap:
        nodes = n_max
    T0 = nodes * m.dt
    if planned is not None and 0 < planned < T0 - 1e-12:
        N, last = horizon_nodes(0.0, planned, m.dt)
        if N and landing_feasible_durations(z0, zd0, interval_durations(N, m.dt, last), lo, hi):
            nodes, T0, at_cap = N, planned, False
    return LandingTime(nodes=nodes, T0=T0, Gamma0=math.exp(omega0 * T0), at_cap=at_cap)


def apex_node(t: float, T: float, durations) -> int | None:
    """Node closest in time to mid-step, or ``None`` once mid-step has passed.

    Node 0 (the current instant) winning also drops the apex term.
    """
    if T is None or 0.5 * T <= t:
        return None
    times = np.concatenate([[0.0], np.cumsum(durations)])
    k = int(np.argmin(np.abs(t + times - 0.5 * T)))
    return k if k >= 1 else None


def _condensed(s: SwingState, m: SwingModel, durations):
    """Affine maps from stacked forces to node positions and velocities per axis."""
    d = np.asarray(durations, dtype=float)
    tau = np.cumsum(d)
    lower = np.tri(len(d), dtype=bool)
    Gp = np.where(lower, 0.5 * d[None, :] ** 2 + d[None, :] * (tau[:, None] - tau[None, :]), 0.0)
    Gv = np.where(lower, d[None, :], 0.0)
    bias = m.Lambda_inv @ m.h_c
    pos, vel = [], []
    for k in range(3):
        L = m.Lambda_inv[k]
        Pk = np.kron(Gp, L)
        Vk = np.kron(Gv, L)
        p0 = s.x[k] + tau * s.x_dot[k] - Gp.sum(axis=1) * bias[k]
        v0 = s.x_dot[k] - Gv.sum(axis=1) * bias[k]
        pos.append((Pk, p0))
        vel.append((Vk, v0))
    return pos, vel


def _build_qp(s, target, durations, m, gp, w, apex, xd_target, corridor=True, hard_terminal=True):
    N = len(durations)
    pos, vel = _condensed(s, m, durations)
    n = 3 * N
    H = 2 * w.alpha1 * np.eye(n)
    g = np.zeros(n)

    def add_ls(row, const, goal, weight):
        nonlocal H, g
        r = goal - const
        H = H + 2 * weight * np.outer(row, row)
        g = g - 2 * weight * r * row

    for k in range(3):
        Pk, p0 = pos[k]
        Vk, v0 = vel[k]
        add_ls(Pk[-1], p0[-1], target[k], w.alpha2)
        add_ls(Vk[-1], v0[-1], xd_target[k], w.alpha3)
    if apex is not None:
        Pz, pz0 = pos[2]
        add_ls(Pz[apex - 1], pz0[apex - 1], gp.z_mid, w.alpha4)
    Pz, pz0 = pos[2]
    Vz, vz0 = vel[2]
    A_eq = b_eq = None
    if hard_terminal:
        A_eq = np.vstack([Pz[-1], Vz[-1]])
        b_eq = np.array([target[2] - pz0[-1], 0.0 - vz0[-1]])
    else:
        add_ls(Pz[-1], pz0[-1], target[2], 1e6)
        add_ls(Vz[-1], vz0[-1], 0.0, 1e4)
    A_in = l_in = u_in = None
    if corridor:
        A_in = Pz
        l_in = gp.z_min - pz0
        u_in = gp.z_max - pz0
    H = 0.5 * (H + H.T)
    cons = Constraints(n, A_eq=A_eq, b_eq=b_eq, A_in=A_in, l_in=l_in, u_in=u_in,
                       lb=np.tile(m.f_min, N), ub=np.tile(m.f_max, N))
    return QpProblem(H, g, cons)


def plan_swing(s: SwingState, target, N: int, m: SwingModel, gp: GaitParams,
               weights: SwingWeights | None = None, t: float = 0.0, T: float | None = None,
               xd_target=None, prev: SwingPlan | None = None, last_dt: float | None = None) -> SwingPlan:
    """Force sequence landing the foot after exactly ``N`` nodes.

    All intervals last one control period except optionally the final one
    (``last_dt``), which lets the terminal node coincide with the planned
    touchdown time. ``t`` and ``T`` (time since step start, planned step
    duration) only place the apex-height node. When the QP is infeasible the previous plan is
    shifted by one node; without a usable previous plan the corridor is
    dropped, and as a last resort the terminal equalities are softened.
    """
    w = weights or SwingWeights()
    target = np.asarray(target, dtype=float).reshape(3)
    xd_target = np.zeros(3) if xd_target is None else np.asarray(xd_target, dtype=float)
    if N <= 0:
        return SwingPlan(forces=np.zeros((0, 3)), predicted=s.stacked()[None, :], N=0, x_f_target=target)
    durations = interval_durations(N, m.dt, last_dt)
    apex = apex_node(t, T, durations)
    attempts = [("", dict())]
    if prev is not None and prev.N >= 2:
        attempts.append(("shifted", None))
    attempts += [("no_corridor", dict(corridor=False)), ("soft_terminal", dict(corridor=False, hard_terminal=False))]
    status = OPTIMAL
    for tag, opts in attempts:
        if opts is None:
            return prev.shifted()
        qp = _build_qp(s, target, durations, m, gp, w, apex, xd_target, **opts)
        sol = solve_qp(qp)
        if sol.status == OPTIMAL:
            forces = sol.x.reshape(N, 3)
            return SwingPlan(forces=forces, predicted=rollout(s, forces, m, durations), N=N,
                             x_f_target=target, durations=durations, status=OPTIMAL, fallback=tag, apex_node=apex,
                             kkt_residual=sol.kkt_residual, iterations=sol.iterations)
        status = sol.status
    # unreachable in practice: the soft problem only has box constraints
    forces = np.tile(np.clip(m.h_c, m.f_min, m.f_max), (N, 1))
    return SwingPlan(forces=forces, predicted=rollout(s, forces, m, durations), N=N, x_f_target=target,
                     durations=durations, status=status, fallback="hold")


def horizon_nodes(t: float, T: float, dt: float) -> tuple[int, float | None]:
    """Node count ``round((T - t) / dt)`` and the final interval landing exactly at ``T``."""
    rem = max(T - t, 0.0)
    N = int(round(rem / dt))
    if N == 0:
        return 0, None
    return N, rem - (N - 1) * dt


def first_force(plan: SwingPlan) -> np.ndarray:
    if plan.N == 0 or len(plan.forces) == 0:
        return np.zeros(3)
    return plan.forces[0].copy()
