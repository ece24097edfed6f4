"""Small dense convex QP and LP solvers.

QPs are solved with the Goldfarb-Idnani dual active-set method, followed by
a polishing solve of the KKT system on the final active set. LPs go through
HiGHS (``scipy.optimize.linprog``); they are never regularized into QPs.

Problems are written as::

    minimize    1/2 x'Hx + g'x
    subject to  A_eq x = b_eq
                l_in <= A_in x <= u_in
                lb <= x <= ub

Infinite entries in ``l_in``, ``u_in``, ``lb`` and ``ub`` drop that side.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

# Diagonal shift tried when H is only positive semidefinite.
PSD_REGULARIZATION = 1e-9
# Equality rows whose pivoted-QR diagonal falls below this (relative) are treated as redundant.
DEPENDENT_ROW_TOL = 1e-10


class InvalidProblem(ValueError):
    pass


def _as2d(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    return a


def _as1d(a, n, fill):
    if a is None:
        return np.full(n, fill)
    return np.asarray(a, dtype=float).reshape(-1)


@dataclass
class Constraints:
    n: int
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    l_in: np.ndarray | None = None
    u_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        n = self.n
        self.A_eq = _as2d(self.A_eq, n)
        self.b_eq = _as1d(self.b_eq, 0, 0.0)
        self.A_in = _as2d(self.A_in, n)
        m = self.A_in.shape[0]
        self.l_in = _as1d(self.l_in, m, -np.inf)
        self.u_in = _as1d(self.u_in, m, np.inf)
        self.lb = _as1d(self.lb, n, -np.inf)
        self.ub = _as1d(self.ub, n, np.inf)
        if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.size:
            raise InvalidProblem("equality constraint dimensions do not match")
        if self.A_in.shape[1] != n or self.l_in.size != m or self.u_in.size != m:
            raise InvalidProblem("inequality constraint dimensions do not match")
        if self.lb.size != n or self.ub.size != n:
            raise InvalidProblem("variable bound dimensions do not match")
        if np.any(self.lb > self.ub) or np.any(self.l_in > self.u_in):
            raise InvalidProblem("lower bound above upper bound")

    def violation(self, x) -> float:
        """Largest absolute constraint violation at ``x``."""
        v = 0.0
        if self.b_eq.size:
            v = max(v, np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if self.A_in.shape[0]:
            ax = self.A_in @ x
            v = max(v, np.max(self.l_in - ax, initial=0.0), np.max(ax - self.u_in, initial=0.0))
        v = max(v, np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0))
        return float(v)


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    constraints: Constraints = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise InvalidProblem(f"H has shape {self.H.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(self.H)) or not np.all(np.isfinite(self.g)):
            raise InvalidProblem("non-finite cost data")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) >= 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise InvalidProblem("H is not symmetric")
        if self.constraints is None:
            self.constraints = Constraints(n)
        elif self.constraints.n != n:
            raise InvalidProblem("constraint and cost dimensions differ")

    @property
    def n(self) -> int:
        return self.g.size


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    duals: dict = field(default_factory=dict)
    kkt_residual: float = np.inf
    primal_violation: float = np.inf
    iterations: int = 0
    objective: float = np.nan

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _stack_inequalities(c: Constraints):
    """Rows ``N x >= b`` plus a map back to (kind, index, sign)."""
    n = c.n
    rows, rhs, tags = [], [], []
    for i in range(c.A_in.shape[0]):
        if np.isfinite(c.l_in[i]):
            rows.append(c.A_in[i])
            rhs.append(c.l_in[i])
            tags.append(("in", i, 1.0))
        if np.isfinite(c.u_in[i]):
            rows.append(-c.A_in[i])
            rhs.append(-c.u_in[i])
            tags.append(("in", i, -1.0))
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(c.lb[i]):
            rows.append(eye[i])
            rhs.append(c.lb[i])
            tags.append(("box", i, 1.0))
        if np.isfinite(c.ub[i]):
            rows.append(-eye[i])
            rhs.append(-c.ub[i])
            tags.append(("box", i, -1.0))
    N = np.array(rows).reshape(len(rows), n)
    return N, np.array(rhs, dtype=float), tags


def _kkt_report(H, g, c: Constraints, x, y_eq, z_in, z_box):
    """Relative stationarity/complementarity residual and primal violation.

    ``z_in`` and ``z_box`` are signed multipliers: positive on an active
    lower side, negative on an active upper side.
    """
    hx = H @ x
    grad = hx + g
    stat = grad - c.A_eq.T @ y_eq - c.A_in.T @ z_in - z_box
    scale = 1.0 + max(np.max(np.abs(hx), initial=0.0), np.max(np.abs(g), initial=0.0))
    res = np.max(np.abs(stat), initial=0.0) / scale

    def side_terms(z, val, lo, hi):
        # dual sign feasibility and complementarity for two-sided rows
        r = 0.0
        lo_part = np.maximum(z, 0.0)
        hi_part = np.maximum(-z, 0.0)
        r = max(r, np.max(np.where(np.isfinite(lo), 0.0, lo_part), initial=0.0))
        r = max(r, np.max(np.where(np.isfinite(hi), 0.0, hi_part), initial=0.0))
        gap_lo = np.where(np.isfinite(lo), val - lo, 0.0)
        gap_hi = np.where(np.isfinite(hi), hi - val, 0.0)
        r = max(r, np.max(np.abs(lo_part * gap_lo), initial=0.0))
        r = max(r, np.max(np.abs(hi_part * gap_hi), initial=0.0))
        return r / scale

    res = max(res, side_terms(z_in, c.A_in @ x, c.l_in, c.u_in))
    res = max(res, side_terms(z_box, x, c.lb, c.ub))
    return float(res), c.violation(x)


def kkt_residual(problem: QpProblem, x, duals) -> float:
    res, _ = _kkt_report(problem.H, problem.g, problem.constraints, x,
                         duals["eq"], duals["in"], duals["box"])
    return res


def _factor(H):
    try:
        return scipy.linalg.cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        pass
    shift = PSD_REGULARIZATION * max(1.0, float(np.max(np.abs(np.diag(H)), initial=0.0)))
    try:
        return scipy.linalg.cho_factor(H + shift * np.eye(H.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        raise InvalidProblem("H is not positive semidefinite") from None


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 1000,
             x0: np.ndarray | None = None) -> QpSolution:
    """Solve a convex QP.

    ``x0`` is an optional known-feasible point. It is only used to settle an
    apparent infeasibility: when the dual method stalls but ``x0`` satisfies
    the constraints, the result is reported as ``max_iter`` rather than
    ``infeasible``.
    """
    H, g, c = problem.H, problem.g, problem.constraints
    n = problem.n
    fixed = np.isfinite(c.lb) & (c.lb == c.ub)
    if fixed.any():
        return _solve_without_fixed(problem, fixed, tol, max_iter, x0)
    keep = _independent_rows(c.A_eq)
    if keep is not None:
        return _solve_reduced(problem, keep, tol, max_iter, x0)
    fac = _factor(H)
    Hinv = scipy.linalg.cho_solve(fac, np.eye(n))
    Hinv = 0.5 * (Hinv + Hinv.T)

    N_in, b_in, tags = _stack_inequalities(c)
    meq = c.A_eq.shape[0]
    # equality rows first; their sign is fixed when they enter the active set
    N_all = np.vstack([c.A_eq, N_in])
    b_all = np.concatenate([c.b_eq, b_in])
    HiN_all = Hinv @ N_all.T
    row_norm = np.maximum(np.linalg.norm(N_all, axis=1), 1e-300)

    x = -Hinv @ g
    active: list[int] = []
    signs: list[float] = []
    u = np.zeros(0)
    feas_tol = 1e-3 * tol
    it = 0
    status = OPTIMAL

    def add_constraint(p, sign):
        nonlocal x, u, active, signs, it
        n_p = sign * N_all[p]
        b_p = sign * b_all[p]
        hn_p = sign * HiN_all[:, p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                return MAX_ITER
            if active:
                idx = np.array(active)
                sg = np.array(signs)
                Na = N_all[idx] * sg[:, None]
                HiNa = HiN_all[:, idx] * sg[None, :]
                S = Na @ HiNa
                try:
                    r = np.linalg.solve(S, Na @ hn_p)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(S, Na @ hn_p, rcond=None)[0]
                z = hn_p - HiNa @ r
            else:
                r = np.zeros(0)
                z = hn_p
            # partial (dual) step: largest step keeping inequality multipliers >= 0
            t1, k = np.inf, -1
            for j, a in enumerate(active):
                if a >= meq and r[j] > 1e-14:
                    tj = u_plus[j] / r[j]
                    if tj < t1:
                        t1, k = tj, j
            zn = float(z @ n_p)
            s_p = float(n_p @ x - b_p)
            t2 = -s_p / zn if zn > 1e-14 * max(1.0, np.dot(n_p, n_p)) else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                return INFEASIBLE
            if not np.isfinite(t2):
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                u_plus = np.delete(u_plus, k)
                del active[k], signs[k]
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                signs.append(sign)
                u = u_plus
                return None
            u_plus = np.delete(u_plus, k)
            del active[k], signs[k]

    for p in range(meq):
        s = float(N_all[p] @ x - b_all[p])
        res = add_constraint(p, 1.0 if s <= 0 else -1.0)
        if res is not None:
            status = res
            break

    while status == OPTIMAL:
        if N_in.shape[0] == 0:
            break
        s = (N_in @ x - b_in) / row_norm[meq:]
        s[[a - meq for a in active if a >= meq]] = np.inf
        p = int(np.argmin(s))
        if s[p] >= -feas_tol:
            break
        res = add_constraint(p + meq, 1.0)
        if res is not None:
            status = res

    if status == OPTIMAL:
        x, u = _polish(H, g, N_all, b_all, active, signs, x, u)

    duals = _unpack_duals(c, tags, meq, active, signs, u)
    kkt, viol = _kkt_report(H, g, c, x, duals["eq"], duals["in"], duals["box"])
    if status == OPTIMAL and (kkt >= tol or viol >= tol):
        status = MAX_ITER
    if status == INFEASIBLE:
        if x0 is not None and c.violation(np.asarray(x0, float)) < tol:
            status = MAX_ITER
        elif _phase_one_feasible(c, tol):
            status = MAX_ITER
    obj = float(0.5 * x @ H @ x + g @ x)
    return QpSolution(x=x, status=status, duals=duals, kkt_residual=kkt,
                      primal_violation=viol, iterations=it, objective=obj)


def _independent_rows(A_eq):
    """Indices of a maximal independent subset of equality rows, or None if all are independent."""
    m = A_eq.shape[0]
    if m < 2:
        return None
    _, R, piv = scipy.linalg.qr(A_eq.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > DEPENDENT_ROW_TOL * max(d[0], 1e-300)))
    if rank == m:
        return None
    return np.sort(piv[:rank])


def _solve_reduced(problem: QpProblem, keep, tol, max_iter, x0):
    c = problem.constraints
    reduced = replace(c, A_eq=c.A_eq[keep], b_eq=c.b_eq[keep])
    sol = solve_qp(QpProblem(problem.H, problem.g, reduced), tol=tol, max_iter=max_iter, x0=x0)
    y_eq = np.zeros(c.A_eq.shape[0])
    y_eq[keep] = sol.duals["eq"]
    duals = {**sol.duals, "eq": y_eq}
    kkt, viol = _kkt_report(problem.H, problem.g, c, sol.x, y_eq, duals["in"], duals["box"])
    status = sol.status
    if status == OPTIMAL and viol >= tol:
        # a dropped row disagrees with the kept ones
        status = INFEASIBLE
    return replace(sol, status=status, duals=duals, kkt_residual=kkt, primal_violation=viol)


def _solve_without_fixed(problem: QpProblem, fixed, tol, max_iter, x0):
    """Substitute variables with ``lb == ub`` and solve for the rest.

    Two opposite active bounds on one variable make the active-set system
    singular, so they are removed up front.
    """
    H, g, c = problem.H, problem.g, problem.constraints
    free = ~fixed
    xf = c.lb[fixed]
    x = np.zeros(c.n)
    x[fixed] = xf
    dual_in = np.zeros(c.A_in.shape[0])
    dual_eq = np.zeros(c.A_eq.shape[0])

    def finish(status, it=0, kkt=None):
        z_box = np.zeros(c.n)
        if free.any():
            z_box[free] = sub_duals["box"]
        stat = H @ x + g - c.A_eq.T @ dual_eq - c.A_in.T @ dual_in
        z_box[fixed] = stat[fixed]
        duals = {"eq": dual_eq, "in": dual_in, "box": z_box}
        k, viol = _kkt_report(H, g, c, x, dual_eq, dual_in, z_box)
        if status == OPTIMAL and (k >= tol or viol >= tol):
            status = MAX_ITER
        return QpSolution(x=x, status=status, duals=duals, kkt_residual=k, primal_violation=viol,
                          iterations=it, objective=float(0.5 * x @ H @ x + g @ x))

    b_eq = c.b_eq - c.A_eq[:, fixed] @ xf
    shift = c.A_in[:, fixed] @ xf
    sub_duals = {"box": np.zeros(int(free.sum()))}
    if not free.any():
        ok = c.violation(x) < tol
        return finish(OPTIMAL if ok else INFEASIBLE)
    sub = Constraints(int(free.sum()), A_eq=c.A_eq[:, free], b_eq=b_eq, A_in=c.A_in[:, free],
                      l_in=c.l_in - shift, u_in=c.u_in - shift, lb=c.lb[free], ub=c.ub[free])
    x0_sub = None if x0 is None else np.asarray(x0, float)[free]
    sol = solve_qp(QpProblem(H[np.ix_(free, free)], g[free] + H[np.ix_(free, fixed)] @ xf, sub),
                   tol=tol, max_iter=max_iter, x0=x0_sub)
    x[free] = sol.x
    dual_eq, dual_in = sol.duals["eq"], sol.duals["in"]
    sub_duals = sol.duals
    return finish(sol.status, sol.iterations)


def _polish(H, g, N_all, b_all, active, signs, x, u):
    """Re-solve the equality-constrained KKT system on the final active set."""
    if not active:
        return x, u
    idx = np.array(active)
    Na = N_all[idx] * np.array(signs)[:, None]
    ba = b_all[idx] * np.array(signs)
    k, n = Na.shape
    K = np.block([[H, -Na.T], [Na, np.zeros((k, k))]])
    rhs = np.concatenate([-g, ba])
    # symmetric equilibration keeps heavily weighted variables from swamping the constraints
    d = 1.0 / np.sqrt(np.maximum(np.max(np.abs(K), axis=1), 1e-300))
    Ks = d[:, None] * K * d[None, :]
    try:
        with warnings.catch_warnings():
            # a degenerate active set makes K singular; keep the unpolished point then
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(Ks, check_finite=False)
            sol = d * scipy.linalg.lu_solve(lu, d * rhs)
            sol = sol + d * scipy.linalg.lu_solve(lu, d * (rhs - K @ sol))  # one refinement step
    except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgWarning):
        return x, u
    if not np.all(np.isfinite(sol)):
        return x, u
    xp, up = sol[:n], sol[n:]
    # keep the polished point only if it does not break dual feasibility
    if np.max(np.abs(xp - x), initial=0.0) > 1e-6 * (1 + np.max(np.abs(x))):
        return x, u
    return xp, up


def _unpack_duals(c: Constraints, tags, meq, active, signs, u):
    y_eq = np.zeros(meq)
    z_in = np.zeros(c.A_in.shape[0])
    z_box = np.zeros(c.n)
    for a, sg, val in zip(active, signs, u):
        if a < meq:
            y_eq[a] = sg * val
        else:
            kind, i, side = tags[a - meq]
            if kind == "in":
                z_in[i] += side * val
            else:
                z_box[i] += side * val
    return {"eq": y_eq, "in": z_in, "box": z_box}


def _phase_one_feasible(c: Constraints, tol: float) -> bool:
    sol = solve_lp(np.zeros(c.n), c, tol=tol)
    return sol.status == OPTIMAL


def solve_lp(cost, constraints: Constraints | None = None, tol: float = 1e-8) -> QpSolution:
    """Solve ``min cost'x`` with HiGHS. Reports unbounded problems distinctly."""
    cost = np.asarray(cost, dtype=float).reshape(-1)
    n = cost.size
    c = constraints if constraints is not None else Constraints(n)
    if c.n != n:
        raise InvalidProblem("constraint and cost dimensions differ")

    lo_rows = np.isfinite(c.l_in)
    hi_rows = np.isfinite(c.u_in)
    A_ub = np.vstack([c.A_in[hi_rows], -c.A_in[lo_rows]])
    b_ub = np.concatenate([c.u_in[hi_rows], -c.l_in[lo_rows]])
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(c.lb, c.ub)]
    res = linprog(
        cost,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=c.A_eq if c.A_eq.shape[0] else None,
        b_eq=c.b_eq if c.A_eq.shape[0] else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    status = {0: OPTIMAL, 1: MAX_ITER, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, MAX_ITER)
    if status != OPTIMAL or res.x is None:
        return QpSolution(x=np.full(n, np.nan), status=status, iterations=int(res.nit or 0))

    x = res.x
    # scipy marginals are d(objective)/d(rhs); convert to signed multipliers
    y_eq = res.eqlin.marginals if c.A_eq.shape[0] else np.zeros(0)
    z_in = np.zeros(c.A_in.shape[0])
    if A_ub.shape[0]:
        m_ub = res.ineqlin.marginals
        nh = int(hi_rows.sum())
        z_in[hi_rows] += m_ub[:nh]
        z_in[lo_rows] -= m_ub[nh:]
    z_box = res.lower.marginals + res.upper.marginals
    duals = {"eq": np.asarray(y_eq), "in": z_in, "box": z_box}
    kkt, viol = _kkt_report(np.zeros((n, n)), cost, c, x, duals["eq"], z_in, z_box)
    if kkt >= tol or viol >= tol:
        status = MAX_ITER
    return QpSolution(x=x, status=status, duals=duals, kkt_residual=kkt,
                      primal_violation=viol, iterations=int(res.nit or 0),
                      objective=float(cost @ x))
