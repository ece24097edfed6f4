"""Polynomial swing-trajectory baseline.

Horizontal axes follow minimum-jerk quintics re-planned from the current
foot state; the vertical axis is a quintic chosen by a small QP with a
sampled height corridor. Polynomials are stored in normalized time
``s = (t - t_start) / (t_end - t_start)`` to keep short segments well scaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gait import GaitParams
from .solver import OPTIMAL, Constraints, QpProblem, solve_qp

SAMPLE_DT = 0.01
JERK_WEIGHT = 1e-8
APEX_WEIGHT = 1.0

# rows: coefficient index 3..5, columns: (P, V, A) end-condition residuals
_END_INV = np.array([[10.0, -4.0, 0.5], [-15.0, 7.0, -1.0], [6.0, -3.0, 0.5]])


class BaselineError(RuntimeError):
    pass


@dataclass
class PolySegment:
    coeffs: np.ndarray  # 6 normalized-time coefficients, lowest order first
    t_start: float
    t_end: float
    fallback: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(6)
        if not self.t_end > self.t_start:
            raise ValueError("segment must have positive duration")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def evaluate(self, t, order: int = 0):
        """Value or time derivative (``order`` 0..3) at absolute time ``t``.

        Beyond ``t_end`` the segment is held at its end state.
        """
        T = self.duration
        s = np.clip((np.asarray(t, dtype=float) - self.t_start) / T, 0.0, 1.0)
        c = self.coeffs
        for _ in range(order):
            c = np.polynomial.polynomial.polyder(c)
        out = np.polynomial.polynomial.polyval(s, c) / T**order
        if order > 0:
            out = np.where(np.asarray(t) > self.t_end, 0.0, out)
        return out

    def state(self, t) -> tuple[float, float, float]:
        return tuple(float(self.evaluate(t, k)) for k in range(3))


def _head(p0, v0, a0, T):
    return np.array([p0, v0 * T, 0.5 * a0 * T * T])


def min_jerk_horizontal(p0, v0, a0, pf, T_rem, t_start: float = 0.0) -> PolySegment:
    """Quintic from (p0, v0, a0) to (pf, 0, 0) in ``T_rem`` seconds."""
    if not T_rem > 0:
        raise ValueError("T_rem must be positive")
    head = _head(p0, v0, a0, T_rem)
    P = pf - head.sum()
    V = -(head[1] + 2 * head[2])
    A = -2 * head[2]
    tail = _END_INV @ np.array([P, V, A])
    return PolySegment(np.concatenate([head, tail]), t_start, t_start + T_rem)


def _jerk_gram() -> np.ndarray:
    """Gram matrix of the third derivative over s in [0, 1] (exact quadrature)."""
    nodes, weights = np.polynomial.legendre.leggauss(4)
    s = 0.5 * (nodes + 1.0)
    wq = 0.5 * weights
    D = np.zeros((len(s), 6))
    D[:, 3] = 6.0
    D[:, 4] = 24.0 * s
    D[:, 5] = 60.0 * s**2
    return D.T @ (wq[:, None] * D)


_GRAM = _jerk_gram()


def _powers(s):
    return np.asarray(s, dtype=float)[..., None] ** np.arange(6)


def corridor_samples(T_rem: float, dt: float = SAMPLE_DT) -> np.ndarray:
    """Normalized sample instants at the control rate strictly before landing.

    The landing instant itself is fixed by the terminal equality.
    """
    k = np.arange(1, int(np.floor(T_rem / dt + 1e-9)) + 1) * dt
    return k[k < T_rem - 1e-9] / T_rem


def vertical_qp(z0, zd0, zdd0, T_rem, gp: GaitParams, prev: PolySegment | None = None,
                t_start: float = 0.0, t_mid: float | None = None, ground: float = 0.0,
                dt: float = SAMPLE_DT) -> PolySegment:
    """Vertical quintic landing at ``ground`` with zero velocity.

    The cost is a small jerk penalty plus the squared deviation from
    ``z_mid`` at absolute time ``t_mid`` (dropped when ``t_mid`` is not
    ahead). On infeasibility the previous segment is returned unchanged,
    which amounts to shifting it by one sample.
    """
    if not T_rem > 0:
        raise ValueError("T_rem must be positive")
    # the three lowest coefficients are fixed by the initial state; optimize the rest
    head = _head(z0, zd0, zdd0, T_rem)
    H = 2 * JERK_WEIGHT * _GRAM[3:, 3:]
    g = np.zeros(3)
    if t_mid is not None and t_mid > t_start and t_mid < t_start + T_rem:
        row = _powers((t_mid - t_start) / T_rem)
        H = H + 2 * APEX_WEIGHT * np.outer(row[3:], row[3:])
        g -= 2 * APEX_WEIGHT * (gp.z_mid - row[:3] @ head) * row[3:]
    A_eq = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0]])
    b_eq = np.array([ground - head.sum(), -(head[1] + 2 * head[2])])
    S = _powers(corridor_samples(T_rem, dt))
    if len(S):
        base = S[:, :3] @ head
        cons = Constraints(3, A_eq=A_eq, b_eq=b_eq, A_in=S[:, 3:],
                           l_in=ground + gp.z_min - base, u_in=ground + gp.z_max - base)
    else:
        cons = Constraints(3, A_eq=A_eq, b_eq=b_eq)
    sol = solve_qp(QpProblem(H, g, cons))
    if sol.status == OPTIMAL:
        return PolySegment(np.concatenate([head, sol.x]), t_start, t_start + T_rem)
    if prev is None:
        raise BaselineError(f"vertical QP {sol.status} and no previous segment to shift")
    return PolySegment(prev.coeffs, prev.t_start, prev.t_end, fallback=True)
