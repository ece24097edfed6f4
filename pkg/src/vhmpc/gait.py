"""Gait types and closed-form LIPM/DCM mathematics.

All horizontal quantities are 2D numpy arrays ``(x, y)``. The lateral axis is
signed in the world frame; helpers such as :func:`swing_sign` translate the
"toward the swing side" convention into world signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

LEFT = "left"
RIGHT = "right"
SIDES = (LEFT, RIGHT)


def other_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    return RIGHT if side == LEFT else LEFT


def swing_sign(stance_side: str) -> float:
    """World lateral sign of the swing side: +1 when standing on the right foot."""
    if stance_side == RIGHT:
        return 1.0
    if stance_side == LEFT:
        return -1.0
    raise ValueError(f"unknown side {stance_side!r}")


@dataclass(frozen=True)
class PendulumParams:
    z0: float = 0.35  # [m]
    g: float = 9.81  # [m/s^2]

    def __post_init__(self):
        if not (self.z0 > 0 and self.g > 0):
            raise ValueError("z0 and g must be positive")

    @property
    def omega0(self) -> float:
        return math.sqrt(self.g / self.z0)


@dataclass(frozen=True)
class DcmState:
    c: np.ndarray
    c_dot: np.ndarray
    xi: np.ndarray

    @classmethod
    def from_com(cls, c, c_dot, p: PendulumParams) -> "DcmState":
        c = np.asarray(c, dtype=float)
        c_dot = np.asarray(c_dot, dtype=float)
        return cls(c=c, c_dot=c_dot, xi=dcm_of(c, c_dot, p))


@dataclass(frozen=True)
class GaitParams:
    """Nominal gait and the bounds of the step adjustment problem.

    ``w`` is measured toward the swing side, so a positive width moves the
    swing foot away from the stance foot. ``b_bounds`` is
    ``(bx_min, bx_max, by_out, by_in)`` for the terminal DCM offset, with the
    lateral entries expressed in the same swing-side signed coordinate as
    :func:`nominal_offsets`; ``None`` means "derive from the nominal offsets".
    """

    l_nom: float = 0.0
    w_nom: float = 0.15
    T_nom: float = 0.2
    l_min: float = -0.12
    l_max: float = 0.12
    w_min: float = -0.1
    w_max: float = 0.3
    T_min: float = 0.1
    T_max: float = 0.3
    b_bounds: tuple[float, float, float, float] | None = None
    z_mid: float = 0.05
    z_min: float = -0.05
    z_max: float = 0.1

    def __post_init__(self):
        if not self.l_min <= self.l_nom <= self.l_max:
            raise ValueError("need l_min <= l_nom <= l_max")
        if not self.w_min <= self.w_nom <= self.w_max:
            raise ValueError("need w_min <= w_nom <= w_max")
        if not 0 < self.T_min <= self.T_nom <= self.T_max:
            raise ValueError("need 0 < T_min <= T_nom <= T_max")
        if not self.z_min <= 0 <= self.z_mid <= self.z_max:
            raise ValueError("need z_min <= 0 <= z_mid <= z_max")
        if self.b_bounds is not None:
            bx_min, bx_max, by_out, by_in = self.b_bounds
            if bx_min > bx_max or by_out > by_in:
                raise ValueError("empty DCM offset box")

    def with_nominal(self, **kw) -> "GaitParams":
        return replace(self, **kw)

    def viability_box(self, p: PendulumParams) -> tuple[float, float, float, float]:
        """Offset box, defaulting to the nominal offsets +-50%.

        The half-width is taken from the larger nominal component so that
        in-place stepping (zero sagittal offset) still gets a usable box.
        """
        if self.b_bounds is not None:
            return tuple(self.b_bounds)
        bx, by = nominal_offsets(self, p)
        half = 0.5 * max(abs(bx), abs(by))
        return (bx - half, bx + half, by - half, by + half)


@dataclass
class StepPlan:
    u_T: np.ndarray
    T: float
    Gamma: float
    b_T: np.ndarray
    viability_slack: np.ndarray = field(default_factory=lambda: np.zeros(2))
    emergency: bool = False
    active: tuple[str, ...] = ()


def dcm_of(c, c_dot, p: PendulumParams) -> np.ndarray:
    return np.asarray(c, dtype=float) + np.asarray(c_dot, dtype=float) / p.omega0


def integrate_lipm(state: DcmState, u0, p: PendulumParams, dt: float) -> DcmState:
    """Exact flow of the pendulum about a fixed stance point for ``dt`` seconds."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    w = p.omega0
    u0 = np.asarray(u0, dtype=float)
    e0 = state.xi - u0
    d0 = state.c - u0
    ep = math.exp(w * dt)
    em = 1.0 / ep
    xi = e0 * ep + u0
    c = d0 * em + e0 * (0.5 * (ep - em)) + u0
    c_dot = w * (xi - c)
    return DcmState(c=c, c_dot=c_dot, xi=xi)


def nominal_offsets(gp: GaitParams, p: PendulumParams, stance_side: str | None = None):
    """Periodic terminal DCM offsets ``(b_x, b_y)``.

    Without ``stance_side`` the lateral value is returned in the swing-side
    signed coordinate (always ``+w/(e^{wT}+1)``). With a side it is converted
    to the world frame for the step currently standing on that foot.
    """
    if gp.T_nom <= 0:
        raise ValueError("T_nom must be positive")
    e = math.exp(p.omega0 * gp.T_nom)
    bx = gp.l_nom / (e - 1.0)
    by = gp.w_nom / (e + 1.0)
    if stance_side is None:
        return bx, by
    return bx, -swing_sign(stance_side) * by


def step_offset_world(l: float, w: float, stance_side: str) -> np.ndarray:
    """World-frame displacement of the next foothold for a (length, width) step."""
    return np.array([l, swing_sign(stance_side) * w])
