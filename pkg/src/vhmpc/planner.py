"""Step location and timing adaptation: one small QP per control cycle.

Decision vector ``z = (d_x, d_y, Gamma, b_x, b_y, s_1..s_4)`` where
``d = u_T - u0`` is the step displacement, ``Gamma = exp(omega0 T)`` the
transformed step time, ``b`` the terminal DCM offset and ``s`` the four
viability slacks. Everything is expressed in world axes; the lateral sign
conventions follow :mod:`vhmpc.gait`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gait import GaitParams, PendulumParams, StepPlan, nominal_offsets, step_offset_world, swing_sign
from .solver import OPTIMAL, Constraints, QpProblem, solve_qp

N_VARS = 9
IX_D = slice(0, 2)
IX_G = 2
IX_B = slice(3, 5)
IX_S = slice(5, 9)
BOUND_TOL = 1e-7


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerWeights:
    alpha1: float = 1.0  # step location
    alpha2: float = 5.0  # step timing
    alpha3: float = 1000.0  # DCM offset
    slack_penalty: float = 1e7

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3, self.slack_penalty) <= 0:
            raise ValueError("planner weights must be positive")


@dataclass
class PlannerInput:
    xi_mea: np.ndarray
    u0: np.ndarray
    t: float
    Gamma0: float
    stance_side: str

    def __post_init__(self):
        self.xi_mea = np.asarray(self.xi_mea, dtype=float).reshape(2)
        self.u0 = np.asarray(self.u0, dtype=float).reshape(2)
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.Gamma0 < 1.0:
            raise ValueError("Gamma0 must be >= 1")
        swing_sign(self.stance_side)  # validates the side


def _problem(inp: PlannerInput, gp: GaitParams, p: PendulumParams, w: PlannerWeights,
             hard_viability: bool = False):
    omega = p.omega0
    sgn = swing_sign(inp.stance_side)
    d_nom = step_offset_world(gp.l_nom, gp.w_nom, inp.stance_side)
    b_nom = np.array(nominal_offsets(gp, p, inp.stance_side))
    G_nom = math.exp(omega * gp.T_nom)

    H = np.zeros((N_VARS, N_VARS))
    g = np.zeros(N_VARS)
    H[0, 0] = H[1, 1] = 2 * w.alpha1
    g[IX_D] = -2 * w.alpha1 * d_nom
    H[IX_G, IX_G] = 2 * w.alpha2
    g[IX_G] = -2 * w.alpha2 * G_nom
    H[3, 3] = H[4, 4] = 2 * w.alpha3
    g[IX_B] = -2 * w.alpha3 * b_nom
    for k in range(5, 9):
        H[k, k] = 2 * w.slack_penalty
        g[k] = w.slack_penalty  # linear part makes the penalty exact for small violations

    # d + b = (xi - u0) e^{-omega t} Gamma
    e = (inp.xi_mea - inp.u0) * math.exp(-omega * inp.t)
    A_eq = np.zeros((2, N_VARS))
    for k in range(2):
        A_eq[k, k] = 1.0
        A_eq[k, 3 + k] = 1.0
        A_eq[k, IX_G] = -e[k]
    b_eq = np.zeros(2)

    # soft offset box; lateral bounds live in the swing-side signed coordinate b_s = -sgn b_y
    bx_min, bx_max, bs_lo, bs_hi = gp.viability_box(p)
    A_in = np.zeros((4, N_VARS))
    A_in[0, 3], A_in[0, 5] = 1.0, 1.0  # b_x + s1 >= bx_min
    A_in[1, 3], A_in[1, 6] = 1.0, -1.0  # b_x - s2 <= bx_max
    A_in[2, 4], A_in[2, 7] = -sgn, 1.0  # b_s + s3 >= bs_lo
    A_in[3, 4], A_in[3, 8] = -sgn, -1.0  # b_s - s4 <= bs_hi
    l_in = np.array([bx_min, -np.inf, bs_lo, -np.inf])
    u_in = np.array([np.inf, bx_max, np.inf, bs_hi])

    lb = np.full(N_VARS, -np.inf)
    ub = np.full(N_VARS, np.inf)
    lb[0], ub[0] = gp.l_min, gp.l_max
    if sgn > 0:
        lb[1], ub[1] = gp.w_min, gp.w_max
    else:
        lb[1], ub[1] = -gp.w_max, -gp.w_min
    G_min = math.exp(omega * gp.T_min)
    G_max = math.exp(omega * gp.T_max)
    G_urgent = inp.Gamma0 * math.exp(omega * inp.t)
    emergency = G_urgent > G_max * (1 + 1e-12)
    lb[IX_G] = max(G_min, G_urgent)
    ub[IX_G] = lb[IX_G] if emergency else max(G_max, lb[IX_G])
    lb[IX_S] = 0.0
    if hard_viability:
        ub[IX_S] = 0.0
    cons = Constraints(N_VARS, A_eq=A_eq, b_eq=b_eq, A_in=A_in, l_in=l_in, u_in=u_in, lb=lb, ub=ub)
    return QpProblem(H, g, cons), emergency


def _active(x, cons: Constraints) -> tuple[str, ...]:
    names = []
    for i, (name, k) in enumerate((("l", 0), ("w", 1), ("Gamma", 2))):
        if abs(x[k] - cons.lb[k]) < BOUND_TOL:
            names.append(f"{name}_min")
        if abs(x[k] - cons.ub[k]) < BOUND_TOL:
            names.append(f"{name}_max")
    for k, name in zip(range(5, 9), ("bx_min", "bx_max", "by_out", "by_in")):
        if x[k] > BOUND_TOL:
            names.append(f"{name}_slack")
    return tuple(names)


def plan_step(inp: PlannerInput, gp: GaitParams, p: PendulumParams,
              w: PlannerWeights | None = None, hard_viability: bool = False) -> StepPlan:
    """Next foothold, step duration and terminal DCM offset."""
    w = w or PlannerWeights()
    qp, emergency = _problem(inp, gp, p, w, hard_viability)
    sol = solve_qp(qp)
    if sol.status != OPTIMAL:
        raise PlannerError(f"step QP not solved: {sol.status}")
    x = sol.x
    Gamma = float(x[IX_G])
    return StepPlan(
        u_T=inp.u0 + x[IX_D],
        T=math.log(Gamma) / p.omega0,
        Gamma=Gamma,
        b_T=x[IX_B].copy(),
        viability_slack=np.maximum(x[IX_S], 0.0),
        emergency=emergency,
        active=_active(x, qp.constraints),
    )
