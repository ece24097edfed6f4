"""Reduction of the projected swing-foot dynamics to a constant linear model.

Samples of whole-body states are projected onto the swing foot; the mean
apparent inertia and mean bias become ``Lambda`` and ``h_c``. For every sample
an LP over joint torques bounds the swing-foot actuation force under the
stance friction cone, and the tightest of those bounds over the dataset gives
a state-independent force box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rigid_body as rb
from .gait import GaitParams, PendulumParams, DcmState, integrate_lipm, nominal_offsets, swing_sign
from .solver import INFEASIBLE, OPTIMAL, UNBOUNDED, Constraints, solve_lp

CALIB_SCHEMA = "vhmpc.calibration/1"
DEFAULT_SAMPLES = 1300
DEFAULT_MU = 0.5
# Mean inertia eigenvalues are clamped at this fraction of the largest one.
PD_CLAMP = 1e-6


class CalibrationError(RuntimeError):
    pass


@dataclass
class CalibSample:
    q: np.ndarray
    v: np.ndarray
    stance: str
    Lambda_c: np.ndarray
    mu_sw: np.ndarray
    S_f: np.ndarray
    rho: np.ndarray
    eta_map: np.ndarray
    f_min_cfg: np.ndarray
    f_max_cfg: np.ndarray
    xdd: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    step: int = -1
    t: float = float("nan")


@dataclass
class SwingModel:
    Lambda: np.ndarray
    h_c: np.ndarray
    f_min: np.ndarray
    f_max: np.ndarray
    dt: float = 0.01
    sample_count: int = 0
    skipped: int = 0
    spread: dict = field(default_factory=dict)
    mu: float = DEFAULT_MU

    def __post_init__(self):
        self.Lambda = np.asarray(self.Lambda, dtype=float).reshape(3, 3)
        self.h_c = np.asarray(self.h_c, dtype=float).reshape(3)
        self.f_min = np.asarray(self.f_min, dtype=float).reshape(3)
        self.f_max = np.asarray(self.f_max, dtype=float).reshape(3)
        if np.max(np.abs(self.Lambda - self.Lambda.T)) > 1e-12:
            raise CalibrationError("Lambda must be symmetric")
        if np.linalg.eigvalsh(self.Lambda)[0] <= 0:
            raise CalibrationError("Lambda must be positive definite")
        if not np.all((self.f_min < self.h_c) & (self.h_c < self.f_max)):
            raise CalibrationError(
                f"holding force h_c={self.h_c} is not inside the force box "
                f"[{self.f_min}, {self.f_max}]")
        self.Lambda_inv = np.linalg.inv(self.Lambda)

    @property
    def A_d(self) -> np.ndarray:
        """Discrete double integrator on ``(x, xdot)`` over one control period."""
        A = np.eye(6)
        A[:3, 3:] = self.dt * np.eye(3)
        return A

    @property
    def B_d(self) -> np.ndarray:
        """Input matrix acting on the acceleration ``Lambda^-1 (f - h_c)``."""
        return np.vstack([0.5 * self.dt**2 * np.eye(3), self.dt * np.eye(3)])

    def acceleration(self, f) -> np.ndarray:
        return self.Lambda_inv @ (np.asarray(f, dtype=float) - self.h_c)

    def force_for(self, xdd) -> np.ndarray:
        return self.Lambda @ np.asarray(xdd, dtype=float) + self.h_c

    def vertical_accel_range(self) -> tuple[float, float]:
        """Exact range of the vertical acceleration over the force box."""
        r = self.Lambda_inv[2]
        base = -r @ self.h_c
        lo = base + np.sum(np.minimum(r * self.f_min, r * self.f_max))
        hi = base + np.sum(np.maximum(r * self.f_min, r * self.f_max))
        return float(lo), float(hi)

    def to_dict(self) -> dict:
        return {
            "schema": CALIB_SCHEMA,
            "Lambda": [float(x) for x in self.Lambda.ravel()],
            "h_c": [float(x) for x in self.h_c],
            "f_min": [float(x) for x in self.f_min],
            "f_max": [float(x) for x in self.f_max],
            "dt": float(self.dt),
            "mu": float(self.mu),
            "sample_count": int(self.sample_count),
            "skipped": int(self.skipped),
            "spread": {k: [float(x) for x in np.ravel(v)] for k, v in sorted(self.spread.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SwingModel":
        if d.get("schema") != CALIB_SCHEMA:
            raise ValueError(f"calibration file: expected schema {CALIB_SCHEMA!r}, got {d.get('schema')!r}")
        try:
            return cls(
                Lambda=np.array(d["Lambda"], float).reshape(3, 3),
                h_c=d["h_c"], f_min=d["f_min"], f_max=d["f_max"], dt=float(d["dt"]),
                sample_count=int(d.get("sample_count", 0)), skipped=int(d.get("skipped", 0)),
                spread={k: np.array(v, float) for k, v in d.get("spread", {}).items()},
                mu=float(d.get("mu", DEFAULT_MU)),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"calibration file: malformed field ({exc})") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SwingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def force_bounds_at(model: rb.RobotModel, q, v, stance: str, mu: float = DEFAULT_MU,
                    tau_min=None, tau_max=None, projected: rb.ProjectedDynamics | None = None):
    """Per-axis swing-foot force range reachable with admissible torques.

    Returns ``(f_min, f_max, status)`` where ``status`` is ``"optimal"`` or
    ``"infeasible"`` (the stance cannot hold this posture).
    """
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    pd = projected if projected is not None else rb.project_to_swing(model, q, v, stance)
    tmin = model.tau_min if tau_min is None else np.broadcast_to(np.asarray(tau_min, float), (model.n,))
    tmax = model.tau_max if tau_max is None else np.broadcast_to(np.asarray(tau_max, float), (model.n,))
    return _force_bounds_lp(pd.S_f, pd.rho, pd.eta_map, mu, tmin, tmax)


def friction_constraints(rho, eta_map, mu, n):
    """Rows ``A tau <= b`` for unilaterality and the linearized cone."""
    k = 0.5 * math.sqrt(2.0) * mu
    ex, ey, ez = eta_map
    rx, ry, rz = rho
    A = np.vstack([-ez, ex - k * ez, -ex - k * ez, ey - k * ez, -ey - k * ez])
    b = np.array([rz, k * rz - rx, k * rz + rx, k * rz - ry, k * rz + ry])
    return A.reshape(5, n), b


def _force_bounds_lp(S_f, rho, eta_map, mu, tmin, tmax):
    n = S_f.shape[1]
    A, b = friction_constraints(rho, eta_map, mu, n)
    cons = Constraints(n, A_in=A, u_in=b, lb=tmin, ub=tmax)
    f_min = np.zeros(3)
    f_max = np.zeros(3)
    for axis in range(3):
        for sign in (1.0, -1.0):
            sol = solve_lp(sign * S_f[axis], cons)
            if sol.status == INFEASIBLE:
                return np.full(3, np.nan), np.full(3, np.nan), INFEASIBLE
            if sol.status == UNBOUNDED:
                raise CalibrationError("force-bound LP is unbounded; check torque limits")
            if sol.status != OPTIMAL:
                raise CalibrationError(f"force-bound LP failed with status {sol.status}")
            if sign > 0:
                f_min[axis] = sol.objective
            else:
                f_max[axis] = -sol.objective
    return f_min, f_max, OPTIMAL


def worst_case_bounds(samples) -> tuple[np.ndarray, np.ndarray]:
    """Inner envelope: the force box admissible at every sampled configuration."""
    samples = list(samples)
    if not samples:
        raise CalibrationError("no samples to aggregate")
    f_min = np.max([s.f_min_cfg for s in samples], axis=0)
    f_max = np.min([s.f_max_cfg for s in samples], axis=0)
    if np.any(f_min >= f_max):
        raise CalibrationError(f"worst-case force interval is empty: [{f_min}, {f_max}]")
    return f_min, f_max


def _pd_project(L):
    L = 0.5 * (L + L.T)
    w, V = np.linalg.eigh(L)
    if w[-1] <= 0:
        raise CalibrationError(f"mean apparent inertia has no positive eigenvalue: {w}")
    w = np.maximum(w, PD_CLAMP * w[-1])
    out = V @ np.diag(w) @ V.T
    return 0.5 * (out + out.T)


def fit_constant_model(samples, dt: float = 0.01, mu: float = DEFAULT_MU, skipped: int = 0) -> SwingModel:
    samples = list(samples)
    if not samples:
        raise CalibrationError("need at least one sample")
    Ls = np.array([s.Lambda_c for s in samples])
    hs = np.array([s.mu_sw for s in samples])
    L_mean = Ls.mean(axis=0)
    h_mean = hs.mean(axis=0)
    Lambda = _pd_project(L_mean)
    if len(samples) == 1:
        # a single sample reproduces itself exactly, up to symmetrization
        Lambda = 0.5 * (samples[0].Lambda_c + samples[0].Lambda_c.T)
        h_mean = samples[0].mu_sw.copy()
    f_min, f_max = worst_case_bounds(samples)
    spread = {
        "Lambda": np.max(np.abs(Ls - Lambda), axis=0),
        "h_c": np.max(np.abs(hs - h_mean), axis=0),
        "f_min_cfg_range": np.ptp([s.f_min_cfg for s in samples], axis=0),
        "f_max_cfg_range": np.ptp([s.f_max_cfg for s in samples], axis=0),
    }
    try:
        return SwingModel(Lambda=Lambda, h_c=h_mean, f_min=f_min, f_max=f_max, dt=dt,
                          sample_count=len(samples), skipped=skipped, spread=spread, mu=mu)
    except CalibrationError as exc:
        raise CalibrationError(f"{exc}; Lambda eigenvalues {np.linalg.eigvalsh(Lambda)}") from exc


@dataclass(frozen=True)
class PoseSample:
    q: np.ndarray
    v: np.ndarray
    stance: str
    xdd: np.ndarray
    step: int
    t: float


def _swing_profile(p0, pf, z_mid, T, t):
    """Rest-to-rest quintic horizontal motion and a bell-shaped vertical arc."""
    s = t / T
    blend = 10 * s**3 - 15 * s**4 + 6 * s**5
    dblend = (30 * s**2 - 60 * s**3 + 30 * s**4) / T
    ddblend = (60 * s - 180 * s**2 + 120 * s**3) / T**2
    pos = p0 + (pf - p0) * blend
    vel = (pf - p0) * dblend
    acc = (pf - p0) * ddblend
    # z = 64 z_mid s^3 (1 - s)^3 peaks at z_mid for s = 1/2
    z = 64 * z_mid * s**3 * (1 - s) ** 3
    zd = 64 * z_mid * (3 * s**2 * (1 - s) ** 3 - 3 * s**3 * (1 - s) ** 2) / T
    zdd = 64 * z_mid * (6 * s * (1 - s) ** 3 - 18 * s**2 * (1 - s) ** 2 + 6 * s**3 * (1 - s)) / T**2
    return (np.array([pos[0], pos[1], z]), np.array([vel[0], vel[1], zd]),
            np.array([acc[0], acc[1], zdd]))


class WalkingReplay:
    """Kinematic replay of randomized LIPM walking.

    Each step draws a step length, width and duration uniformly inside the
    gait bounds and a random CoM push (force held for ``push_duration``). The
    CoM follows the pendulum flow about the stance foot, steered so the DCM
    would end each step at the nominal offset from the new foothold; the swing
    foot follows a rest-to-rest polynomial arc. Whole-body states come from leg
    IK with an upright base at the pendulum height.
    """

    def __init__(self, model: rb.RobotModel, gait: GaitParams | None = None,
                 pendulum: PendulumParams | None = None, n_steps: int = 50, seed: int = 0,
                 push_force=(2.0, 2.0, 1.0), push_duration: float = 0.05):
        self.model = model
        self.gait = gait or GaitParams()
        self.pendulum = pendulum or PendulumParams()
        self.n_steps = n_steps
        self.seed = seed
        self.push_force = np.asarray(push_force, dtype=float)
        self.push_duration = push_duration

    def poses(self, count: int):
        if count <= 0:
            return
        rng = np.random.default_rng(self.seed)
        gp, p, m = self.gait, self.pendulum, self.model
        w0 = p.omega0
        per_step = np.full(self.n_steps, count // self.n_steps)
        per_step[: count % self.n_steps] += 1
        stance_side = "left"
        u0 = np.array([0.0, 0.5 * gp.w_nom])
        other = np.array([0.0, -0.5 * gp.w_nom])
        c = 0.5 * (u0 + other)
        q_guess = m.neutral()
        q_guess[2] = p.z0
        for leg in m.feet:
            j = m.leg_joints(leg)
            q_guess[[7 + k for k in j]] = [0.0, -0.6, 1.2]
        for k in range(self.n_steps):
            T = rng.uniform(gp.T_min, gp.T_max)
            l = rng.uniform(gp.l_min, gp.l_max)
            w = rng.uniform(gp.w_min, gp.w_max)
            push = rng.uniform(-1.0, 1.0, 3) * self.push_force
            u_T = u0 + np.array([l, swing_sign(stance_side) * w])
            stance_nom = GaitParams(l_nom=0.0, w_nom=gp.w_nom, T_nom=gp.T_nom, T_min=gp.T_min, T_max=gp.T_max)
            b = np.array(nominal_offsets(stance_nom, p, stance_side))
            xi0 = u0 + (u_T + b - u0) * math.exp(-w0 * T)
            c_dot = w0 * (xi0 - c) + push[:2] * self.push_duration / m.total_mass
            state = DcmState(c=c, c_dot=c_dot, xi=c + c_dot / w0)
            swing_start = np.array([other[0], other[1], 0.0])
            swing_end = np.array([u_T[0], u_T[1], 0.0])
            for j in range(per_step[k]):
                t = (j + 0.5) / per_step[k] * T
                s = integrate_lipm(state, u0, p, t)
                x_sw, xd_sw, xdd_sw = _swing_profile(swing_start[:2], swing_end[:2], gp.z_mid, T, t)
                yield self._pose(q_guess, s, u0, stance_side, x_sw, xd_sw, xdd_sw, k, t)
            end = integrate_lipm(state, u0, p, T)
            c = end.c
            other, u0 = u0, u_T
            stance_side = "right" if stance_side == "left" else "left"

    def _pose(self, q_guess, s, u0, stance_side, x_sw, xd_sw, xdd_sw, step, t):
        m = self.model
        q = q_guess.copy()
        q[0:2] = s.c
        q[2] = self.pendulum.z0
        stance = f"{stance_side}_foot"
        swing = next(f for f in m.feet if f != stance)
        try:
            q = rb.leg_ik(m, q, stance, [u0[0], u0[1], 0.0])
            q = rb.leg_ik(m, q, swing, x_sw)
            v = np.zeros(m.nv)
            v[0:2] = s.c_dot
            for frame, vel in ((stance, np.zeros(3)), (swing, xd_sw)):
                cols = [6 + j for j in m.leg_joints(frame)]
                v[cols] = rb.leg_rates(m, q, v[:6], frame, vel)
        except rb.SingularConfiguration:
            return None
        return PoseSample(q=q, v=v, stance=stance, xdd=xdd_sw, step=step, t=t)


def workspace_poses(model: rb.RobotModel, count: int, seed: int = 0, pendulum: PendulumParams | None = None,
                    reach=(0.15, 0.3, 0.08)):
    """Rejection-sampled stance/swing placements with random velocities."""
    rng = np.random.default_rng(seed)
    p = pendulum or PendulumParams()
    made = 0
    while made < count:
        side = ("left", "right")[rng.integers(2)]
        stance = f"{side}_foot"
        swing = next(f for f in model.feet if f != stance)
        q = model.neutral()
        q[2] = p.z0
        q[7:] = np.tile([0.0, -0.6, 1.2], model.n // 3)
        st = np.array([rng.uniform(-0.05, 0.05), -swing_sign(side) * rng.uniform(0.0, 0.12), 0.0])
        sw = st + np.array([rng.uniform(-reach[0], reach[0]), swing_sign(side) * rng.uniform(-0.1, reach[1]),
                            rng.uniform(0.0, reach[2])])
        try:
            q = rb.leg_ik(model, q, stance, st)
            q = rb.leg_ik(model, q, swing, sw)
            v = np.zeros(model.nv)
            v[:2] = rng.normal(scale=0.3, size=2)
            v[[6 + j for j in model.leg_joints(stance)]] = rb.leg_rates(model, q, v[:6], stance, np.zeros(3))
            v[[6 + j for j in model.leg_joints(swing)]] = rb.leg_rates(
                model, q, v[:6], swing, rng.normal(scale=0.5, size=3))
        except rb.SingularConfiguration:
            continue
        made += 1
        yield PoseSample(q=q, v=v, stance=stance, xdd=np.full(3, np.nan), step=-1, t=float("nan"))


def collect_samples(model: rb.RobotModel, source, count: int = DEFAULT_SAMPLES, mu: float = DEFAULT_MU):
    """Project each pose and attach its force bounds.

    ``source`` is either an object with a ``poses(count)`` generator (such as
    :class:`WalkingReplay`) or an iterable of :class:`PoseSample`. Returns
    ``(samples, skipped)`` where skipped counts unreachable, singular or
    unsupported postures.
    """
    if count <= 0:
        return [], 0
    poses = source.poses(count) if hasattr(source, "poses") else iter(source)
    samples, skipped = [], 0
    for pose in poses:
        if len(samples) >= count:
            break
        if pose is None:
            skipped += 1
            continue
        try:
            pd = rb.project_to_swing(model, pose.q, pose.v, pose.stance)
        except rb.SingularConfiguration:
            skipped += 1
            continue
        f_min, f_max, status = _force_bounds_lp(pd.S_f, pd.rho, pd.eta_map, mu, model.tau_min, model.tau_max)
        if status != OPTIMAL:
            skipped += 1
            continue
        samples.append(CalibSample(
            q=pose.q, v=pose.v, stance=pose.stance, Lambda_c=pd.Lambda_c, mu_sw=pd.mu_sw, S_f=pd.S_f,
            rho=pd.rho, eta_map=pd.eta_map, f_min_cfg=f_min, f_max_cfg=f_max, xdd=pose.xdd,
            step=pose.step, t=pose.t))
    return samples, skipped


def calibrate(model: rb.RobotModel, count: int = DEFAULT_SAMPLES, seed: int = 0, dt: float = 0.01,
              mu: float = DEFAULT_MU, gait: GaitParams | None = None, pendulum: PendulumParams | None = None,
              n_steps: int = 50):
    """Replay-driven calibration; returns ``(SwingModel, samples)``."""
    source = WalkingReplay(model, gait=gait, pendulum=pendulum, n_steps=max(1, min(n_steps, count)), seed=seed)
    samples, skipped = collect_samples(model, source, count, mu=mu)
    return fit_constant_model(samples, dt=dt, mu=mu, skipped=skipped), samples


def samples_table(samples) -> tuple[list[str], list[list[float]]]:
    """Per-sample rows for the inertia/bias/force-bound plots."""
    header = ["index", "step", "t", "stance",
              "L_xx", "L_xy", "L_xz", "L_yy", "L_yz", "L_zz",
              "inertia_x", "inertia_y", "inertia_z", "bias_x", "bias_y", "bias_z",
              "fmin_x", "fmin_y", "fmin_z", "fmax_x", "fmax_y", "fmax_z"]
    rows = []
    for i, s in enumerate(samples):
        L = s.Lambda_c
        inertia = L @ s.xdd
        rows.append([i, s.step, s.t, s.stance, L[0, 0], L[0, 1], L[0, 2], L[1, 1], L[1, 2], L[2, 2],
                     *inertia, *s.mu_sw, *s.f_min_cfg, *s.f_max_cfg])
    return header, rows
