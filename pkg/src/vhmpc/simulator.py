"""Hybrid walking simulation: LIPM body, calibrated swing foot, timed contact switches.

The body follows the closed-form pendulum flow about the stance point. The
swing foot follows ``xdd = Lambda^-1 (f - h_c)`` under the force chosen by the
active swing generator. The stance switches exactly at the planned step time;
whether the swing foot touched down earlier or later than that instant is
recorded as the landing-time error. Controllers work in the stance-foot frame
and always aim at the stance ground height, so terrain offsets are unknown to
them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baseline import BaselineError, PolySegment, min_jerk_horizontal, vertical_qp
from .calibration import SwingModel
from .config import ConfigError
from .gait import (
    LEFT,
    DcmState,
    GaitParams,
    PendulumParams,
    StepPlan,
    integrate_lipm,
    nominal_offsets,
    other_side,
    step_offset_world,
)
from .planner import PlannerInput, PlannerWeights, plan_step
from .swing import LandingTime, SwingPlan, SwingState, SwingWeights, first_force, horizon_nodes, min_landing_time, plan_swing

SCENARIO_SCHEMA = "vhmpc.scenario/1"
GENERATORS = ("mpc", "poly")
ROBOT_WEIGHT = 12.5  # [N]
ARM_HEIGHT = 1e-3  # the foot must clear the landing ground by this much before contact counts
CONTACT_TOL = 1e-9
TIME_EPS = 1e-12


@dataclass
class Impulse:
    t: float
    J: np.ndarray  # [N s], world frame

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float).reshape(3)


@dataclass
class ForcePush:
    t: float
    F: np.ndarray  # [N], world frame
    duration: float

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float).reshape(3)


@dataclass
class Slip:
    t: float
    d: np.ndarray  # stance displacement [m], world frame

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).reshape(2)


@dataclass
class Scenario:
    name: str = "walk"
    n_steps: int = 20
    duration: float | None = None
    desired_velocity: tuple[float, float] = (0.0, 0.0)
    impulses: list[Impulse] = field(default_factory=list)
    forces: list[ForcePush] = field(default_factory=list)
    ground_offsets: dict[int, float] = field(default_factory=dict)  # landing index -> ground height
    slips: list[Slip] = field(default_factory=list)
    seed: int = 0
    generator: str = "mpc"
    dcm_noise: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)
    gait: dict = field(default_factory=dict)
    planner_weights: dict = field(default_factory=dict)
    swing_weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.dcm_noise < 0:
            raise ValueError("dcm_noise must be non-negative")
        if abs(self.desired_velocity[1]) > 0:
            raise ValueError("lateral desired velocity is not supported; use 0")
        for f in self.forces:
            if f.duration <= 0:
                raise ValueError("force push duration must be positive")

    def gait_params(self, base: GaitParams | None = None) -> GaitParams:
        gp = replace(base or GaitParams(), **self.gait)
        vx = self.desired_velocity[0]
        if vx:
            gp = replace(gp, l_nom=float(np.clip(vx * gp.T_nom, gp.l_min, gp.l_max)))
        return gp

    def to_dict(self) -> dict:
        return {
            "schema": SCENARIO_SCHEMA,
            "name": self.name,
            "n_steps": self.n_steps,
            "duration": self.duration,
            "desired_velocity": [float(v) for v in self.desired_velocity],
            "impulses": [{"t": float(i.t), "J": [float(x) for x in i.J]} for i in self.impulses],
            "forces": [{"t": float(f.t), "F": [float(x) for x in f.F], "duration": float(f.duration)}
                       for f in self.forces],
            "ground_offsets": [{"step": int(k), "height": float(v)} for k, v in sorted(self.ground_offsets.items())],
            "slips": [{"t": float(s.t), "d": [float(x) for x in s.d]} for s in self.slips],
            "seed": int(self.seed),
            "generator": self.generator,
            "dcm_noise": float(self.dcm_noise),
            "origin": [float(v) for v in self.origin],
            "gait": dict(self.gait),
            "planner_weights": dict(self.planner_weights),
            "swing_weights": dict(self.swing_weights),
        }


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"scenario: field '{where}': expected a finite number, got {v!r}")
    return float(v)


def _vec(v, n, where):
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(f"scenario: field '{where}': expected a list of {n} numbers, got {v!r}")
    return np.array([_num(x, f"{where}[{i}]") for i, x in enumerate(v)])


def _events(d, key, spec):
    items = d.get(key, [])
    if not isinstance(items, list):
        raise ConfigError(f"scenario: field '{key}': expected a list")
    out = []
    for i, item in enumerate(items):
        where = f"{key}[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"scenario: field '{where}': expected an object")
        vals = {}
        for name, n in spec.items():
            if name not in item:
                raise ConfigError(f"scenario: field '{where}.{name}': missing")
            vals[name] = _num(item[name], f"{where}.{name}") if n == 0 else _vec(item[name], n, f"{where}.{name}")
        out.append(vals)
    return out


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ConfigError(f"scenario: field 'schema': expected {SCENARIO_SCHEMA!r}, got {d.get('schema')!r}")
    known = {f.name for f in fields(Scenario)} | {"schema"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"scenario: unknown field(s) {', '.join(unknown)}")
    kw = {}
    if "name" in d:
        kw["name"] = str(d["name"])
    for key in ("n_steps", "seed"):
        if key in d:
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"scenario: field '{key}': expected an integer, got {v!r}")
            kw[key] = v
    if d.get("duration") is not None:
        kw["duration"] = _num(d["duration"], "duration")
    if "dcm_noise" in d:
        kw["dcm_noise"] = _num(d["dcm_noise"], "dcm_noise")
    for key in ("desired_velocity", "origin"):
        if key in d:
            kw[key] = tuple(_vec(d[key], 2, key))
    if "generator" in d:
        kw["generator"] = d["generator"]
    kw["impulses"] = [Impulse(e["t"], e["J"]) for e in _events(d, "impulses", {"t": 0, "J": 3})]
    kw["forces"] = [ForcePush(e["t"], e["F"], e["duration"])
                    for e in _events(d, "forces", {"t": 0, "F": 3, "duration": 0})]
    kw["slips"] = [Slip(e["t"], e["d"]) for e in _events(d, "slips", {"t": 0, "d": 2})]
    offsets = {}
    for i, e in enumerate(_events(d, "ground_offsets", {"step": 0, "height": 0})):
        if e["step"] != int(e["step"]) or e["step"] < 1:
            raise ConfigError(f"scenario: field 'ground_offsets[{i}].step': expected a positive integer")
        offsets[int(e["step"])] = e["height"]
    kw["ground_offsets"] = offsets
    for key, cls in (("gait", GaitParams), ("planner_weights", PlannerWeights), ("swing_weights", SwingWeights)):
        sub = d.get(key, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"scenario: field '{key}': expected an object")
        names = {f.name for f in fields(cls)}
        for k, v in sub.items():
            if k not in names:
                raise ConfigError(f"scenario: field '{key}.{k}': unknown parameter")
            if k == "b_bounds":
                if v is not None:
                    sub = {**sub, k: tuple(_vec(v, 4, f"{key}.{k}"))}
            else:
                _num(v, f"{key}.{k}")
        kw[key] = dict(sub)
    try:
        return Scenario(**kw)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


@dataclass
class SimConfig:
    model: SwingModel
    pendulum: PendulumParams = field(default_factory=PendulumParams)
    gait: GaitParams = field(default_factory=GaitParams)
    planner_weights: PlannerWeights = field(default_factory=PlannerWeights)
    swing_weights: SwingWeights = field(default_factory=SwingWeights)
    dt_sim: float = 0.001
    dt_ctrl: float = 0.01
    mass: float = ROBOT_WEIGHT / 9.81
    fall_distance: float = 5.0

    @property
    def n_max(self) -> int:
        return int(round(self.gait.T_max / self.dt_ctrl))


@dataclass
class StepRecord:
    index: int
    stance_side: str
    t_start: float
    T_planned: float
    t_land: float
    u_T: np.ndarray  # commanded landing point [m, 2D]
    landing: np.ndarray  # realized landing point [m, 3D]
    dcm_offset: np.ndarray  # xi - realized landing point at the switch
    early: bool
    emergencies: int = 0
    fallbacks: int = 0
    clipped_ticks: int = 0

    @property
    def location_error(self) -> np.ndarray:
        return self.landing[:2] - self.u_T

    @property
    def time_error(self) -> float:
        return self.t_land - self.T_planned


@dataclass
class WorldState:
    dcm: DcmState
    stance_side: str
    stance: np.ndarray  # [m, 3D]
    swing: SwingState  # world frame
    t: float = 0.0
    t_step: float = 0.0
    step_index: int = 0
    h_land: float = 0.0
    h_takeoff: float = 0.0
    armed: bool = False
    touched: bool = False
    t_touch: float = float("nan")


TICK_COLUMNS = [
    "t", "step", "t_step", "stance_side", "u0_x", "u0_y", "stance_z", "c_x", "c_y", "cd_x", "cd_y",
    "xi_x", "xi_y", "foot_x", "foot_y", "foot_z", "foot_vx", "foot_vy", "foot_vz",
    "f_x", "f_y", "f_z", "clipped", "touched", "T_plan", "uT_x", "uT_y",
]
CYCLE_COLUMNS = [
    "t", "step", "t_step", "generator", "xi_x", "xi_y", "u0_x", "u0_y", "Gamma0", "T0_nodes", "at_cap",
    "uT_x", "uT_y", "T", "b_x", "b_y", "slack_norm", "emergency", "active", "N", "fallback",
    "terminal_err", "terminal_z", "terminal_vz", "active_force_bounds",
]
STEP_COLUMNS = [
    "scenario", "generator", "step", "stance_side", "t_start", "T_planned", "t_land", "time_error", "uT_x", "uT_y",
    "land_x", "land_y", "land_z", "err_x", "err_y", "b_x", "b_y", "early", "emergencies", "fallbacks",
    "clipped_ticks",
]


@dataclass
class SimTrace:
    scenario: str
    generator: str
    seed: int
    ticks: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    events: list = field(default_factory=list)  # (t, kind, detail)
    fell: bool = False
    fall_step: int | None = None
    fall_time: float | None = None

    def step_rows(self):
        for s in self.steps:
            yield [self.scenario, self.generator, s.index, s.stance_side, s.t_start, s.T_planned, s.t_land, s.time_error, *s.u_T,
                   *s.landing, *s.location_error, *s.dcm_offset, int(s.early), s.emergencies,
                   s.fallbacks, s.clipped_ticks]

    def write_csv(self, directory, prefix: str = "") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for name, cols, rows in (("ticks", TICK_COLUMNS, self.ticks), ("cycles", CYCLE_COLUMNS, self.cycles),
                                 ("steps", STEP_COLUMNS, list(self.step_rows()))):
            path = directory / f"{prefix}{name}.csv"
            write_rows(path, cols, rows)
            out.append(path)
        return out

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "generator": self.generator,
            "seed": self.seed,
            "steps_completed": len(self.steps),
            "fell": self.fell,
            "fall_step": self.fall_step,
            "fall_time": self.fall_time,
            "events": [[float(t), k, d] for t, k, d in self.events],
            "per_step": [
                {"step": s.index, "location_error": [float(x) for x in s.location_error],
                 "time_error": float(s.time_error), "early": s.early}
                for s in self.steps
            ],
            "stats": landing_stats([self]).get(self.generator, {}),
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# -- swing generators -------------------------------------------------------------------


def _no_plan(N: int) -> dict:
    """Cycle info when no new swing plan is produced; terminal values are undefined."""
    nan = float("nan")
    return {"N": N, "fallback": "", "terminal_err": 0.0, "terminal_z": nan, "terminal_vz": nan,
            "active_force_bounds": 0}


class MpcGenerator:
    name = "mpc"

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.plan: SwingPlan | None = None
        self.force = cfg.model.h_c.copy()

    def reset(self):
        self.plan = None
        self.force = self.cfg.model.h_c.copy()

    def control(self, s_rel: SwingState, target_rel, step: StepPlan, t_step: float) -> dict:
        cfg = self.cfg
        N, last = horizon_nodes(t_step, step.T, cfg.dt_ctrl)
        if N == 0:
            # inside the stretched final interval of the previous plan: keep its force
            return _no_plan(0)
        self.plan = plan_swing(s_rel, target_rel, N, cfg.model, cfg.gait, cfg.swing_weights, t=t_step,
                               T=step.T, prev=self.plan, last_dt=last)
        self.force = first_force(self.plan)
        m = cfg.model
        at_bounds = int(np.sum(np.isclose(self.plan.forces, m.f_min, atol=1e-7))
                        + np.sum(np.isclose(self.plan.forces, m.f_max, atol=1e-7)))
        term = self.plan.terminal
        err = float(np.linalg.norm(term[:2] - np.asarray(target_rel)[:2]))
        return {"N": N, "fallback": self.plan.fallback, "terminal_err": err,
                "terminal_z": float(term[2] - target_rel[2]), "terminal_vz": float(term[5]),
                "active_force_bounds": at_bounds}

    def tick_force(self, t_step: float, h: float):
        return self.force, False


class PolyGenerator:
    name = "poly"

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.reset()

    def reset(self):
        self.segs: list[PolySegment] | None = None
        self.force = self.cfg.model.h_c.copy()

    def control(self, s_rel: SwingState, target_rel, step: StepPlan, t_step: float) -> dict:
        cfg = self.cfg
        T_rem = step.T - t_step
        N = int(round(max(T_rem, 0.0) / cfg.dt_ctrl))
        if T_rem < cfg.dt_sim:
            return _no_plan(N)
        acc = cfg.model.acceleration(self.force)
        segs = [min_jerk_horizontal(s_rel.x[k], s_rel.x_dot[k], acc[k], target_rel[k], T_rem, t_start=t_step)
                for k in range(2)]
        prev_z = self.segs[2] if self.segs is not None else None
        try:
            zseg = vertical_qp(s_rel.x[2], s_rel.x_dot[2], acc[2], T_rem, cfg.gait, prev=prev_z,
                               t_start=t_step, t_mid=0.5 * step.T, dt=cfg.dt_ctrl)
        except BaselineError:
            # no previous solution: hold the current height until the switch
            zseg = PolySegment([s_rel.x[2], 0, 0, 0, 0, 0], t_step, t_step + T_rem, fallback=True)
        self.segs = segs + [zseg]
        end = np.array([self.segs[k].evaluate(self.segs[k].t_end) for k in range(3)], dtype=float)
        err = float(np.linalg.norm(end[:2] - np.asarray(target_rel)[:2]))
        zf = self.segs[2]
        return {"N": N, "fallback": "shifted" if zseg.fallback else "", "terminal_err": err,
                "terminal_z": float(zf.evaluate(zf.t_end)), "terminal_vz": float(zf.evaluate(zf.t_end, 1)),
                "active_force_bounds": 0}

    def tick_force(self, t_step: float, h: float):
        """Force realizing the tick-average acceleration of the reference (clipped)."""
        m = self.cfg.model
        if self.segs is None or h <= 0:
            return self.force, False
        a_des = np.array([float(seg.evaluate(t_step + h, 1) - seg.evaluate(t_step, 1)) / h for seg in self.segs])
        f = m.force_for(a_des)
        fc = np.clip(f, m.f_min, m.f_max)
        self.force = fc
        return fc, bool(np.any(fc != f))


# -- episode ----------------------------------------------------------------------------


def initial_state(cfg: SimConfig, origin=(0.0, 0.0)) -> WorldState:
    gp, p = cfg.gait, cfg.pendulum
    u0 = np.asarray(origin, dtype=float)
    b0 = np.array(nominal_offsets(gp, p, other_side(LEFT)))
    xi0 = u0 + b0
    prev_foot = u0 - step_offset_world(gp.l_nom, gp.w_nom, other_side(LEFT))
    return WorldState(
        dcm=DcmState(c=xi0.copy(), c_dot=np.zeros(2), xi=xi0.copy()),
        stance_side=LEFT,
        stance=np.array([u0[0], u0[1], 0.0]),
        swing=SwingState([prev_foot[0], prev_foot[1], 0.0], np.zeros(3)),
    )


def _advance_foot(ws: WorldState, accel, h: float):
    """Move the swing foot for ``h`` seconds; returns the touchdown offset within the tick or None."""
    x, v = ws.swing.x, ws.swing.x_dot
    if ws.touched:
        return None
    z, vz, az = x[2], v[2], accel[2]
    tau_hit = None
    if ws.armed:
        g = ws.h_land
        # earliest root of z + vz t + az t^2 / 2 = g on (0, h], or a tangent touch at the end
        cands = []
        if abs(az) > 1e-15:
            disc = vz * vz - 2 * az * (z - g)
            if disc >= 0:
                sq = math.sqrt(disc)
                cands = [(-vz - sq) / az, (-vz + sq) / az]
        elif abs(vz) > 0:
            cands = [(g - z) / vz]
        cands = [c for c in cands if 0 < c <= h]
        z_end = z + vz * h + 0.5 * az * h * h
        if cands:
            tau_hit = min(cands)
        elif z_end <= g + CONTACT_TOL:
            tau_hit = h
    tau = h if tau_hit is None else tau_hit
    new_x = x + v * tau + 0.5 * accel * tau * tau
    new_v = v + accel * tau
    if tau_hit is not None:
        new_x[2] = ws.h_land
        ws.swing = SwingState(new_x, np.zeros(3))
        ws.touched = True
        ws.t_touch = ws.t_step + tau_hit
        return tau_hit
    if not ws.armed and new_x[2] < ws.h_takeoff:
        new_x[2] = ws.h_takeoff  # cannot sink into the ground it is leaving
        new_v[2] = max(new_v[2], 0.0)
    if new_x[2] > ws.h_land + ARM_HEIGHT:
        ws.armed = True
    ws.swing = SwingState(new_x, new_v)
    return None


def _next_event(t, impulses, i_imp, slips, i_slip, forces) -> float:
    """Time of the next scheduled disturbance change after ``t``."""
    times = [impulses[i_imp].t] if i_imp < len(impulses) else []
    if i_slip < len(slips):
        times.append(slips[i_slip].t)
    for f in forces:
        times += [f.t, f.t + f.duration]
    return min((x for x in times if x > t + TIME_EPS), default=math.inf)


def run_episode(scenario: Scenario, cfg: SimConfig, record_ticks: bool = True) -> SimTrace:
    """Simulate ``scenario`` with the swing generator it names."""
    gp = scenario.gait_params(cfg.gait)
    cfg = replace(cfg, gait=gp,
                  planner_weights=replace(cfg.planner_weights, **scenario.planner_weights),
                  swing_weights=replace(cfg.swing_weights, **scenario.swing_weights))
    p = cfg.pendulum
    omega = p.omega0
    rng = np.random.default_rng(scenario.seed)
    trace = SimTrace(scenario=scenario.name, generator=scenario.generator, seed=scenario.seed)
    gen = MpcGenerator(cfg) if scenario.generator == "mpc" else PolyGenerator(cfg)
    ws = initial_state(cfg, scenario.origin)
    ws.h_land = scenario.ground_offsets.get(1, 0.0)
    t_end = math.inf if scenario.duration is None else scenario.duration
    if scenario.n_steps == 0 or t_end <= 0:
        return trace

    impulses = sorted(scenario.impulses, key=lambda e: e.t)
    slips = sorted(scenario.slips, key=lambda e: e.t)
    i_imp = i_slip = 0
    step_plan: StepPlan | None = None
    next_ctrl = 0.0
    t_start = 0.0
    emergencies = fallbacks = clipped = 0
    force = gen.force

    while len(trace.steps) < scenario.n_steps and ws.t < t_end - TIME_EPS:
        # instantaneous disturbances due at this instant
        while i_imp < len(impulses) and impulses[i_imp].t <= ws.t + TIME_EPS:
            J = impulses[i_imp].J
            ws.dcm = DcmState.from_com(ws.dcm.c, ws.dcm.c_dot + J[:2] / cfg.mass, p)
            trace.events.append((ws.t, "impulse", [float(x) for x in J]))
            i_imp += 1
        while i_slip < len(slips) and slips[i_slip].t <= ws.t + TIME_EPS:
            d = slips[i_slip].d
            ws.stance = ws.stance + np.array([d[0], d[1], 0.0])
            trace.events.append((ws.t, "slip", [float(x) for x in d]))
            i_slip += 1

        u0 = ws.stance[:2].copy()
        ending = step_plan is not None and step_plan.T - ws.t_step <= 0.5 * cfg.dt_sim
        if ending and ws.t_step >= next_ctrl - TIME_EPS:
            # a decision now could not act before the switch; keep the final plan
            next_ctrl += cfg.dt_ctrl
        elif ws.t_step >= next_ctrl - TIME_EPS:
            s_rel = SwingState(ws.swing.x - ws.stance, ws.swing.x_dot)
            if ws.touched:
                # contact is sensed: the foot is already down, whatever the terrain
                lt = LandingTime(nodes=0, T0=0.0, Gamma0=1.0)
            else:
                planned = None if step_plan is None or ws.t_step == 0.0 else step_plan.T - ws.t_step
                lt = min_landing_time(s_rel, cfg.model, omega, n_max=cfg.n_max, planned=planned)
            xi_mea = ws.dcm.xi + (rng.normal(0.0, scenario.dcm_noise, 2) if scenario.dcm_noise else 0.0)
            step_plan = plan_step(PlannerInput(xi_mea, u0, ws.t_step, lt.Gamma0, ws.stance_side), gp, p,
                                  cfg.planner_weights)
            emergencies += int(step_plan.emergency)
            target_rel = np.array([*(step_plan.u_T - u0), 0.0])
            if ws.touched:
                info = _no_plan(0)
            else:
                info = gen.control(s_rel, target_rel, step_plan, ws.t_step)
            fallbacks += int(bool(info["fallback"]))
            trace.cycles.append([
                ws.t, ws.step_index, ws.t_step, gen.name, *xi_mea, *u0, lt.Gamma0, lt.nodes, int(lt.at_cap),
                *step_plan.u_T, step_plan.T, *step_plan.b_T, float(np.linalg.norm(step_plan.viability_slack)),
                int(step_plan.emergency), "|".join(step_plan.active), info["N"], info["fallback"],
                info["terminal_err"], info["terminal_z"], info["terminal_vz"], info["active_force_bounds"],
            ])
            next_ctrl += cfg.dt_ctrl

        # tick length: stop exactly at the switch, the next control instant, disturbance times and the episode end
        h = min(cfg.dt_sim, step_plan.T - ws.t_step, next_ctrl - ws.t_step, t_end - ws.t,
                _next_event(ws.t, impulses, i_imp, slips, i_slip, scenario.forces) - ws.t)
        h = max(h, 0.0)

        if h > 0:
            # a plan ending exactly now switches without a zero-length tick
            # body
            pivot = u0.copy()
            for fp in scenario.forces:
                if fp.t <= ws.t + TIME_EPS < fp.t + fp.duration:
                    pivot -= fp.F[:2] / cfg.mass / omega**2
            ws.dcm = integrate_lipm(ws.dcm, pivot, p, h)

            # swing foot
            if ws.touched:
                force, was_clipped = np.zeros(3), False
            else:
                force, was_clipped = gen.tick_force(ws.t_step, h)
            clipped += int(was_clipped)
            _advance_foot(ws, cfg.model.acceleration(force), h)
            ws.t += h
            ws.t_step += h

            if record_ticks:
                trace.ticks.append([
                    ws.t, ws.step_index, ws.t_step, ws.stance_side, *ws.stance[:2], ws.stance[2], *ws.dcm.c,
                    *ws.dcm.c_dot, *ws.dcm.xi, *ws.swing.x, *ws.swing.x_dot, *force, int(was_clipped),
                    int(ws.touched), step_plan.T, *step_plan.u_T,
                ])

        if np.linalg.norm(ws.dcm.xi - ws.stance[:2]) > cfg.fall_distance:
            trace.fell = True
            trace.fall_step = ws.step_index
            trace.fall_time = ws.t
            trace.events.append((ws.t, "fall", ws.step_index))
            break

        if ws.t_step >= step_plan.T - TIME_EPS:
            # phase switch at the planned instant
            if ws.touched:
                t_land, early = ws.t_touch, True
            else:
                above = ws.swing.x[2] - ws.h_land
                vz = ws.swing.x_dot[2]
                g = p.g
                fall = (vz + math.sqrt(vz * vz + 2 * g * above)) / g if above > 0 else 0.0
                t_land, early = ws.t_step + fall, False
            landing = np.array([ws.swing.x[0], ws.swing.x[1], ws.h_land])
            rec = StepRecord(
                index=ws.step_index + 1, stance_side=ws.stance_side, t_start=t_start, T_planned=ws.t_step,
                t_land=t_land, u_T=step_plan.u_T.copy(), landing=landing,
                dcm_offset=ws.dcm.xi - landing[:2], early=early,
                emergencies=emergencies, fallbacks=fallbacks, clipped_ticks=clipped,
            )
            trace.steps.append(rec)
            trace.events.append((ws.t, "contact", rec.index))
            old_stance = ws.stance.copy()
            ws.stance_side = other_side(ws.stance_side)
            ws.stance = landing
            ws.swing = SwingState(old_stance, np.zeros(3))
            ws.step_index += 1
            ws.t_step = 0.0
            ws.h_takeoff = old_stance[2]
            ws.h_land = scenario.ground_offsets.get(ws.step_index + 1, 0.0)
            ws.armed = ws.touched = False
            ws.t_touch = float("nan")
            t_start = ws.t
            next_ctrl = 0.0
            emergencies = fallbacks = clipped = 0
            gen.reset()
    return trace


# -- statistics -------------------------------------------------------------------------


def _box(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {
        "n": int(v.size), "mean": float(v.mean()), "median": float(med), "q1": float(q1), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
    }


def error_stats(records) -> dict:
    """Box statistics of absolute errors from ``(err_x, err_y, time_error)`` rows."""
    e = np.asarray(records, dtype=float).reshape(-1, 3)
    if not len(e):
        return {}
    return {
        "steps": int(len(e)),
        "location_x": _box(np.abs(e[:, 0])),
        "location_y": _box(np.abs(e[:, 1])),
        "time": _box(np.abs(e[:, 2])),
        "signed_mean": {"x": float(e[:, 0].mean()), "y": float(e[:, 1].mean()), "time": float(e[:, 2].mean())},
    }


def grouped_stats(rows) -> dict:
    """Statistics per generator, plus per ``generator/scenario`` under ``by_scenario``.

    ``rows`` holds ``(generator, scenario, err_x, err_y, time_error)``.
    Generators without completed steps are omitted.
    """
    by_gen: dict[str, list] = {}
    by_sc: dict[str, list] = {}
    for gen, sc, ex, ey, et in rows:
        by_gen.setdefault(gen, []).append((ex, ey, et))
        by_sc.setdefault(f"{gen}/{sc}", []).append((ex, ey, et))
    out = {g: error_stats(v) for g, v in sorted(by_gen.items())}
    if out:
        out["by_scenario"] = {k: error_stats(v) for k, v in sorted(by_sc.items())}
    return out


def landing_stats(traces, skip_first: int = 0) -> dict:
    """Statistics of absolute landing location and time errors, grouped by generator.

    Signed means are reported alongside. Returns an empty dict when no step
    was completed.
    """
    if isinstance(traces, SimTrace):
        traces = [traces]
    rows = [(tr.generator, tr.scenario, *s.location_error, s.time_error)
            for tr in traces for s in tr.steps[skip_first:]]
    return grouped_stats(rows)
