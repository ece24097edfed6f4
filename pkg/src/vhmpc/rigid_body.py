"""Floating-base dynamics of a point-footed biped and its swing-foot projection.

Spatial vectors are ordered (linear, angular). The configuration is
``q = [base position (3), base quaternion (x, y, z, w), joint angles (n)]``
and the generalized velocity is ``v = [base linear velocity, base angular
velocity, joint rates]`` with the base twist expressed in the base frame.
Foot Jacobians return the world-aligned linear velocity of the foot point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROBOT_SCHEMA = "vhmpc.robot/1"
AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}
# Stance Jacobian conditioning below which the projection is refused.
SINGULAR_RATIO = 1e-8


class SingularConfiguration(RuntimeError):
    pass


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def quat_to_rot(quat):
    x, y, z, w = quat
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        v = np.zeros(3)
        v[i] = 0.25 * s
        v[j] = (R[j, i] + R[i, j]) / s
        v[k] = (R[k, i] + R[i, k]) / s
        w = (R[k, j] - R[j, k]) / s
        x, y, z = v
    return np.array([x, y, z, w])


def axis_angle(axis, angle):
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def exp_so3(w):
    th = np.linalg.norm(w)
    if th < 1e-12:
        return np.eye(3) + skew(w)
    return axis_angle(w / th, th)


def exp_se3(twist):
    """Rigid displacement ``(R, p)`` generated by a body twist ``(v, w)``."""
    v, w = twist[:3], twist[3:]
    th = np.linalg.norm(w)
    K = skew(w)
    if th < 1e-8:
        V = np.eye(3) + 0.5 * K + K @ K / 6.0
    else:
        V = np.eye(3) + (1 - math.cos(th)) / th**2 * K + (th - math.sin(th)) / th**3 * K @ K
    return exp_so3(w), V @ v


def motion_transform(R, p):
    """6x6 map of motion vectors from child coordinates to parent coordinates."""
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[:3, 3:] = skew(p) @ R
    X[3:, 3:] = R
    return X


def inverse_motion_transform(R, p):
    X = np.zeros((6, 6))
    X[:3, :3] = R.T
    X[:3, 3:] = -R.T @ skew(p)
    X[3:, 3:] = R.T
    return X


def crm(m):
    v, w = m[:3], m[3:]
    X = np.zeros((6, 6))
    X[:3, :3] = skew(w)
    X[:3, 3:] = skew(v)
    X[3:, 3:] = skew(w)
    return X


def crf(m):
    return -crm(m).T


def spatial_inertia(mass, com, inertia):
    c = np.asarray(com, dtype=float)
    C = skew(c)
    Ic = np.zeros((6, 6))
    Ic[:3, :3] = mass * np.eye(3)
    Ic[:3, 3:] = -mass * C
    Ic[3:, :3] = mass * C
    Ic[3:, 3:] = np.asarray(inertia, dtype=float) - mass * C @ C
    return Ic


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    parent: int = -1  # body index; -1 for the floating base
    axis: str | None = None
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class RobotModel:
    """Floating base plus revolute joints, bodies ordered parent-before-child."""

    links: tuple[Link, ...]
    feet: dict  # frame name -> (body index, offset in body frame)
    tau_min: np.ndarray
    tau_max: np.ndarray
    gravity: float = 9.81
    name: str = "robot"

    def __post_init__(self):
        for i, link in enumerate(self.links):
            if link.mass <= 0:
                raise ValueError(f"link {link.name} must have positive mass")
            I = np.asarray(link.inertia)
            if np.max(np.abs(I - I.T)) > 1e-12 or np.linalg.eigvalsh(I)[0] <= 0:
                raise ValueError(f"link {link.name} inertia must be symmetric positive definite")
            if i > 0 and not (0 <= link.parent < i):
                raise ValueError("links must be ordered parent before child")
        if len(self.tau_min) != self.n or len(self.tau_max) != self.n:
            raise ValueError("torque limits must have one entry per joint")

    @property
    def n(self) -> int:
        return len(self.links) - 1

    @property
    def nv(self) -> int:
        return self.n + 6

    @property
    def nq(self) -> int:
        return self.n + 7

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def total_weight(self) -> float:
        return self.total_mass * self.gravity

    @property
    def selection(self) -> np.ndarray:
        B = np.zeros((self.nv, self.n))
        B[6:, :] = np.eye(self.n)
        return B

    def leg_joints(self, frame: str) -> list[int]:
        """Joint indices (0-based, into the actuated vector) driving a foot."""
        body = self.feet[frame][0]
        chain = []
        while body > 0:
            chain.append(body - 1)
            body = self.links[body].parent
        return chain[::-1]

    def neutral(self) -> np.ndarray:
        q = np.zeros(self.nq)
        q[6] = 1.0
        return q

    def inertias(self):
        return [spatial_inertia(l.mass, l.com, l.inertia) for l in self.links]


def bolt_like() -> RobotModel:
    """Default light biped: 12.5 N total weight, ~0.44 m stretched leg, 2 N.m joints."""
    g = 9.81
    hip = dict(mass=0.08, com=[0.0, 0.01, -0.015], inertia=np.diag([2.5e-5, 2.5e-5, 2.0e-5]))
    upper = dict(mass=0.14, com=[0.0, 0.0, -0.1], inertia=np.diag([4.7e-4, 4.7e-4, 1.5e-5]))
    lower = dict(mass=0.06, com=[0.0, 0.0, -0.11], inertia=np.diag([2.4e-4, 2.4e-4, 6.0e-6]))
    leg_mass = 2 * (hip["mass"] + upper["mass"] + lower["mass"])
    base_mass = 12.5 / g - leg_mass
    links = [Link("base", base_mass, np.zeros(3), np.diag([2.8e-3, 1.0e-3, 3.0e-3]))]
    feet = {}
    for side, s in (("left", 1.0), ("right", -1.0)):
        root = len(links)
        links.append(Link(f"{side}_hip_aa", hip["mass"], np.array([0.0, s * 0.01, -0.015]),
                          hip["inertia"], parent=0, axis="x", offset=np.array([0.0, s * 0.065, 0.0])))
        links.append(Link(f"{side}_hip_fe", upper["mass"], np.array(upper["com"]), upper["inertia"],
                          parent=root, axis="y", offset=np.array([0.0, s * 0.015, -0.02])))
        links.append(Link(f"{side}_knee", lower["mass"], np.array(lower["com"]), lower["inertia"],
                          parent=root + 1, axis="y", offset=np.array([0.0, 0.0, -0.2])))
        feet[f"{side}_foot"] = (root + 2, np.array([0.0, 0.0, -0.22]))
    n = len(links) - 1
    return RobotModel(tuple(links), feet, tau_min=np.full(n, -2.0), tau_max=np.full(n, 2.0),
                      gravity=g, name="bolt-like")


def model_to_dict(model: RobotModel) -> dict:
    names = [l.name for l in model.links]
    return {
        "schema": ROBOT_SCHEMA,
        "name": model.name,
        "gravity": model.gravity,
        "links": [
            {
                "name": l.name,
                "parent": None if i == 0 else names[l.parent],
                "axis": l.axis,
                "offset": list(map(float, l.offset)),
                "mass": float(l.mass),
                "com": list(map(float, l.com)),
                "inertia": np.asarray(l.inertia, dtype=float).tolist(),
            }
            for i, l in enumerate(model.links)
        ],
        "feet": {k: {"body": names[b], "offset": list(map(float, off))} for k, (b, off) in model.feet.items()},
        "tau_min": list(map(float, model.tau_min)),
        "tau_max": list(map(float, model.tau_max)),
    }


def model_from_dict(d: dict) -> RobotModel:
    if d.get("schema") != ROBOT_SCHEMA:
        raise ValueError(f"robot config: expected schema {ROBOT_SCHEMA!r}, got {d.get('schema')!r}")
    try:
        names = [l["name"] for l in d["links"]]
        links = []
        for i, l in enumerate(d["links"]):
            parent = -1 if i == 0 else names.index(l["parent"])
            links.append(Link(l["name"], float(l["mass"]), np.array(l["com"], float),
                              np.array(l["inertia"], float), parent=parent, axis=l.get("axis"),
                              offset=np.array(l.get("offset", [0, 0, 0]), float)))
        feet = {k: (names.index(v["body"]), np.array(v["offset"], float)) for k, v in d["feet"].items()}
        n = len(links) - 1
        tmin = np.broadcast_to(np.asarray(d["tau_min"], float), (n,)).copy()
        tmax = np.broadcast_to(np.asarray(d["tau_max"], float), (n,)).copy()
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"robot config: malformed field ({exc})") from exc
    return RobotModel(tuple(links), feet, tmin, tmax, gravity=float(d.get("gravity", 9.81)),
                      name=d.get("name", "robot"))


def load_model(path) -> RobotModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def save_model(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


class _Kinematics:
    """Per-body placements and transforms for one configuration."""

    def __init__(self, model: RobotModel, q):
        q = np.asarray(q, dtype=float)
        if q.size != model.nq:
            raise ValueError(f"configuration has size {q.size}, expected {model.nq}")
        quat = q[3:7]
        norm = np.linalg.norm(quat)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ValueError("base quaternion must be normalized")
        nb = len(model.links)
        self.R = [None] * nb  # world orientation of each body
        self.p = [None] * nb  # world position of each body origin
        self.Xup = [None] * nb  # parent-to-child motion transform
        self.S = [None] * nb
        self.R[0] = quat_to_rot(quat / norm)
        self.p[0] = q[:3].copy()
        for i in range(1, nb):
            link = model.links[i]
            axis = AXES[link.axis]
            Rj = axis_angle(axis, q[7 + i - 1])
            self.Xup[i] = inverse_motion_transform(Rj, link.offset)
            self.S[i] = np.concatenate([np.zeros(3), axis])
            lam = link.parent
            self.R[i] = self.R[lam] @ Rj
            self.p[i] = self.p[lam] + self.R[lam] @ link.offset


def _forward_pass(model, kin, v, a, gravity):
    nb = len(model.links)
    I = model.inertias()
    vel = [None] * nb
    acc = [None] * nb
    vel[0] = v[:6].copy()
    acc[0] = a[:6].copy()
    if gravity:
        acc[0][:3] += kin.R[0].T @ np.array([0.0, 0.0, model.gravity])
    for i in range(1, nb):
        lam = model.links[i].parent
        qd, qdd = v[6 + i - 1], a[6 + i - 1]
        vel[i] = kin.Xup[i] @ vel[lam] + kin.S[i] * qd
        acc[i] = kin.Xup[i] @ acc[lam] + kin.S[i] * qdd + crm(vel[i]) @ (kin.S[i] * qd)
    return I, vel, acc


def rnea(model: RobotModel, q, v, a, gravity: bool = True) -> np.ndarray:
    """Inverse dynamics: generalized force producing ``a`` from ``(q, v)``."""
    kin = _Kinematics(model, q)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    I, vel, acc = _forward_pass(model, kin, v, a, gravity)
    nb = len(model.links)
    f = [I[i] @ acc[i] + crf(vel[i]) @ (I[i] @ vel[i]) for i in range(nb)]
    tau = np.zeros(model.nv)
    for i in range(nb - 1, 0, -1):
        tau[6 + i - 1] = kin.S[i] @ f[i]
        lam = model.links[i].parent
        f[lam] = f[lam] + kin.Xup[i].T @ f[i]
    tau[:6] = f[0]
    return tau


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Composite-rigid-body algorithm."""
    kin = _Kinematics(model, q)
    nb = len(model.links)
    Ic = model.inertias()
    for i in range(nb - 1, 0, -1):
        lam = model.links[i].parent
        Ic[lam] = Ic[lam] + kin.Xup[i].T @ Ic[i] @ kin.Xup[i]
    M = np.zeros((model.nv, model.nv))
    M[:6, :6] = Ic[0]
    for i in range(1, nb):
        F = Ic[i] @ kin.S[i]
        ci = 6 + i - 1
        M[ci, ci] = kin.S[i] @ F
        j = i
        while model.links[j].parent > 0:
            F = kin.Xup[j].T @ F
            j = model.links[j].parent
            cj = 6 + j - 1
            M[ci, cj] = M[cj, ci] = kin.S[j] @ F
        F = kin.Xup[j].T @ F
        M[:6, ci] = F
        M[ci, :6] = F
    return M


def nonlinear_effects(model: RobotModel, q, v) -> np.ndarray:
    return rnea(model, q, v, np.zeros(model.nv), gravity=True)


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    return rnea(model, q, np.zeros(model.nv), np.zeros(model.nv), gravity=True)


def _foot(model, frame):
    try:
        return model.feet[frame]
    except KeyError:
        raise ValueError(f"unknown frame {frame!r}; expected one of {sorted(model.feet)}") from None


def frame_position(model: RobotModel, q, frame: str) -> np.ndarray:
    body, off = _foot(model, frame)
    kin = _Kinematics(model, q)
    return kin.p[body] + kin.R[body] @ off


def frame_jacobian(model: RobotModel, q, frame: str) -> np.ndarray:
    body, off = _foot(model, frame)
    kin = _Kinematics(model, q)
    x = kin.p[body] + kin.R[body] @ off
    J = np.zeros((3, model.nv))
    R0 = kin.R[0]
    r0 = R0.T @ (x - kin.p[0])
    J[:, :3] = R0
    J[:, 3:6] = -R0 @ skew(r0)
    b = body
    while b > 0:
        axis_w = kin.R[b] @ AXES[model.links[b].axis]
        J[:, 6 + b - 1] = np.cross(axis_w, x - kin.p[b])
        b = model.links[b].parent
    return J


def frame_velocity(model: RobotModel, q, v, frame: str) -> np.ndarray:
    return frame_jacobian(model, q, frame) @ np.asarray(v, dtype=float)


def jdot_v(model: RobotModel, q, v, frame: str) -> np.ndarray:
    """Foot acceleration at zero generalized acceleration (no gravity)."""
    body, off = _foot(model, frame)
    kin = _Kinematics(model, q)
    v = np.asarray(v, dtype=float)
    _, vel, acc = _forward_pass(model, kin, v, np.zeros(model.nv), gravity=False)
    lin, ang = vel[body][:3], vel[body][3:]
    alin, aang = acc[body][:3], acc[body][3:]
    v_pt = lin + np.cross(ang, off)
    a_pt = alin + np.cross(aang, off) + np.cross(ang, v_pt)
    return kin.R[body] @ a_pt


def integrate(model: RobotModel, q, v, dt: float) -> np.ndarray:
    """Advance ``q`` along the constant generalized velocity ``v`` for ``dt``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    R0 = quat_to_rot(q[3:7])
    dR, dp = exp_se3(v[:6] * dt)
    out = q.copy()
    out[:3] = q[:3] + R0 @ dp
    quat = rot_to_quat(R0 @ dR)
    out[3:7] = quat / np.linalg.norm(quat)
    out[7:] = q[7:] + v[6:] * dt
    return out


def potential_energy(model: RobotModel, q) -> float:
    kin = _Kinematics(model, q)
    z = sum(l.mass * (kin.p[i] + kin.R[i] @ l.com)[2] for i, l in enumerate(model.links))
    return float(model.gravity * z)


def center_of_mass(model: RobotModel, q) -> np.ndarray:
    kin = _Kinematics(model, q)
    m = sum(l.mass * (kin.p[i] + kin.R[i] @ l.com) for i, l in enumerate(model.links))
    return m / model.total_mass


@dataclass
class ProjectedDynamics:
    P: np.ndarray
    M_c: np.ndarray
    Lambda_c: np.ndarray
    mu_sw: np.ndarray
    S_f: np.ndarray
    rho: np.ndarray
    eta_map: np.ndarray
    J: np.ndarray
    J_c: np.ndarray

    def contact_force(self, tau) -> np.ndarray:
        return self.rho + self.eta_map @ np.asarray(tau, dtype=float)

    def swing_force(self, tau) -> np.ndarray:
        return self.S_f @ np.asarray(tau, dtype=float)


def project_to_swing(model: RobotModel, q, v, stance: str) -> ProjectedDynamics:
    """Constraint-consistent swing-foot dynamics with the stance foot fixed.

    ``Lambda_c xdd + mu_sw = S_f tau`` and the stance contact force is
    ``rho + eta_map tau`` (force exerted by the ground on the robot).
    """
    if stance not in model.feet:
        raise ValueError(f"unknown stance frame {stance!r}")
    swing = next(f for f in model.feet if f != stance)
    v = np.asarray(v, dtype=float)
    M = mass_matrix(model, q)
    h = nonlinear_effects(model, q, v)
    B = model.selection
    J_c = frame_jacobian(model, q, stance)
    J = frame_jacobian(model, q, swing)
    U, sig, Vt = np.linalg.svd(J_c, full_matrices=False)
    if sig[-1] < SINGULAR_RATIO * sig[0]:
        raise SingularConfiguration(f"stance Jacobian is singular (sigma ratio {sig[-1] / sig[0]:.2e})")
    J_c_pinv = Vt.T @ np.diag(1.0 / sig) @ U.T
    nv = model.nv
    eye = np.eye(nv)
    P = eye - J_c_pinv @ J_c
    Pdot_v = -J_c_pinv @ jdot_v(model, q, v, stance)
    M_c = P @ M + eye - P
    Mc_inv = np.linalg.inv(M_c)
    Mc_inv_P = Mc_inv @ P
    Lambda_inv = J @ Mc_inv_P @ J.T
    Lambda_c = np.linalg.inv(Lambda_inv)
    Lambda_c = 0.5 * (Lambda_c + Lambda_c.T)
    mu_sw = Lambda_c @ (J @ Mc_inv_P @ h - jdot_v(model, q, v, swing) - J @ Mc_inv @ Pdot_v)
    S_f = Lambda_c @ J @ Mc_inv_P @ B
    JcT_pinv = J_c_pinv.T
    K = eye - M @ Mc_inv_P
    rho = JcT_pinv @ (eye - P) @ (K @ h + M @ Mc_inv @ Pdot_v)
    eta_map = -JcT_pinv @ (eye - P) @ K @ B
    return ProjectedDynamics(P=P, M_c=M_c, Lambda_c=Lambda_c, mu_sw=mu_sw, S_f=S_f,
                             rho=rho, eta_map=eta_map, J=J, J_c=J_c)


def leg_ik(model: RobotModel, q_guess, frame: str, target, tol=1e-10, max_iter=50) -> np.ndarray:
    """Damped Newton IK on one leg's joints for a world foot position.

    Raises ``SingularConfiguration`` when the target is out of reach.
    """
    q = np.asarray(q_guess, dtype=float).copy()
    joints = model.leg_joints(frame)
    cols = [6 + j for j in joints]
    target = np.asarray(target, dtype=float)
    for _ in range(max_iter):
        err = target - frame_position(model, q, frame)
        if np.linalg.norm(err) < tol:
            return q
        Jl = frame_jacobian(model, q, frame)[:, cols]
        step = np.linalg.solve(Jl.T @ Jl + 1e-8 * np.eye(len(cols)), Jl.T @ err)
        q[[7 + j for j in joints]] += step
    raise SingularConfiguration(f"IK for {frame} did not converge (residual {np.linalg.norm(err):.2e})")


def leg_rates(model: RobotModel, q, v_base, frame: str, foot_velocity) -> np.ndarray:
    """Joint rates of one leg giving a world foot velocity for a given base twist."""
    J = frame_jacobian(model, q, frame)
    joints = model.leg_joints(frame)
    cols = [6 + j for j in joints]
    rhs = np.asarray(foot_velocity, dtype=float) - J[:, :6] @ np.asarray(v_base, dtype=float)
    Jl = J[:, cols]
    if abs(np.linalg.det(Jl)) < 1e-9:
        raise SingularConfiguration(f"{frame} leg Jacobian is singular")
    return np.linalg.solve(Jl, rhs)
