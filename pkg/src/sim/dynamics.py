"""
File: src/sim/dynamics.py
Task: Planar N-link serial arm rigid-body dynamics shared by the idealized
simulator and the reference plant: mass matrix, bias forces (recursive
Newton-Euler), a semi-implicit Euler step, end-effector kinematics and
drag-free ballistic flight for the throw task.

Conventions:
- q = 0 points every link along +x; angles are relative (joint i rotates
  link i relative to link i-1); gravity acts along -z.
- Every function accepts arbitrary leading batch dimensions: q has shape
  (..., n_joints). Contractions are written with einsum (no BLAS) so a row's
  result never depends on how many rows share the call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteInputError

GRAVITY = 9.81
DIVERGENCE_LIMIT = 1.0e3


# --------- Domain types ---------

@dataclass
class ArmModel:
    link_length: np.ndarray
    link_mass: np.ndarray
    link_com_offset: np.ndarray
    link_inertia: np.ndarray
    gravity: float = GRAVITY
    base_height: float = 0.6

    def __post_init__(self):
        self.link_length = np.asarray(self.link_length, dtype=np.float64)
        self.link_mass = np.asarray(self.link_mass, dtype=np.float64)
        self.link_com_offset = np.asarray(self.link_com_offset, dtype=np.float64)
        self.link_inertia = np.asarray(self.link_inertia, dtype=np.float64)

        n = self.link_length.shape[0]
        problems = []
        if n < 1:
            problems.append("n_joints must be >= 1")
        for name in ("link_mass", "link_com_offset", "link_inertia"):
            if getattr(self, name).shape != (n,):
                problems.append(f"{name} must have one entry per link ({n})")
        if not problems:
            if np.any(self.link_length <= 0) or np.any(self.link_mass <= 0) or np.any(self.link_inertia <= 0):
                problems.append("lengths, masses and inertias must be strictly positive")
            if np.any(self.link_com_offset <= 0) or np.any(self.link_com_offset > self.link_length):
                problems.append("com offsets must lie in (0, link_length]")
        if problems:
            raise ValueError("invalid ArmModel: " + "; ".join(problems))

    @property
    def n_joints(self) -> int:
        return int(self.link_length.shape[0])

    @property
    def reach(self) -> float:
        return float(self.link_length.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "link_length": self.link_length.tolist(),
            "link_mass": self.link_mass.tolist(),
            "link_com_offset": self.link_com_offset.tolist(),
            "link_inertia": self.link_inertia.tolist(),
            "gravity": float(self.gravity),
            "base_height": float(self.base_height),
        }


def default_arm(n_joints: int = 2) -> ArmModel:
    """Desk-scale arm: 0.45/0.35 m links, 3.0/1.5 kg, COM mid-link, rod inertia."""
    lengths = np.array([0.45, 0.35] + [0.25] * max(0, n_joints - 2))[:n_joints]
    masses = np.array([3.0, 1.5] + [0.8] * max(0, n_joints - 2))[:n_joints]
    return ArmModel(
        link_length=lengths,
        link_mass=masses,
        link_com_offset=lengths / 2.0,
        link_inertia=masses * lengths**2 / 12.0,
    )


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.qdot = np.asarray(self.qdot, dtype=np.float64)
        if self.q.shape != self.qdot.shape:
            raise ValueError(f"q shape {self.q.shape} != qdot shape {self.qdot.shape}")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qdot.copy())


@dataclass
class BallState:
    position: np.ndarray
    velocity: np.ndarray
    attached: np.ndarray = field(default_factory=lambda: np.zeros((), dtype=bool))


# --------- Helpers ---------

def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteInputError(f"{name} contains non-finite entries", payload={"name": name, "n_bad": bad})


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _perp(c: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.stack([-s, c], axis=-1)


def link_angles(q: np.ndarray) -> np.ndarray:
    """Absolute link angles from relative joint angles."""
    return np.cumsum(q, axis=-1)


def is_diverged(state: JointState, limit: float = DIVERGENCE_LIMIT) -> np.ndarray:
    """Per-row divergence flag: any non-finite entry or |q| beyond `limit` rad."""
    finite = np.isfinite(state.q).all(axis=-1) & np.isfinite(state.qdot).all(axis=-1)
    with np.errstate(invalid="ignore"):
        big = (np.abs(state.q) > limit).any(axis=-1)
    return ~finite | big


# --------- Operations ---------

def com_jacobians(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Translational Jacobians of every link COM, shape (..., n_links, 2, n_joints)."""
    n = model.n_joints
    th = link_angles(q)
    c, s = np.cos(th), np.sin(th)
    jv = np.zeros(q.shape[:-1] + (n, 2, n))
    for i in range(n):
        for k in range(i + 1):
            dx = -model.link_com_offset[i] * s[..., i]
            dz = model.link_com_offset[i] * c[..., i]
            for j in range(k, i):
                dx = dx - model.link_length[j] * s[..., j]
                dz = dz + model.link_length[j] * c[..., j]
            jv[..., i, 0, k] = dx
            jv[..., i, 1, k] = dz
    return jv


def mass_matrix(model: ArmModel, q: np.ndarray, armature: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Joint-space inertia M(q) = sum_i m_i Jv_i^T Jv_i + I_i Jw_i^T Jw_i, plus
    the armature on the diagonal. Exactly symmetric by construction.
    """
    q = np.asarray(q, dtype=np.float64)
    _require_finite("q", q)
    n = model.n_joints
    jv = com_jacobians(model, q)
    m = np.zeros(q.shape[:-1] + (n, n))
    for i in range(n):
        m = m + model.link_mass[i] * np.einsum("...ak,...al->...kl", jv[..., i, :, :], jv[..., i, :, :])
        m[..., : i + 1, : i + 1] += model.link_inertia[i]
    if armature is not None:
        arm = np.broadcast_to(np.asarray(armature, dtype=np.float64), q.shape)
        idx = np.arange(n)
        m[..., idx, idx] += arm
    return m


def _rnea(model: ArmModel, q: np.ndarray, qdot: np.ndarray, qddot: np.ndarray, gravity: float) -> np.ndarray:
    n = model.n_joints
    th = link_angles(q)
    w = np.cumsum(qdot, axis=-1)
    al = np.cumsum(qddot, axis=-1)
    c, s = np.cos(th), np.sin(th)

    # base acceleration of -g folds gravity into the inertial terms
    acc = np.zeros(q.shape[:-1] + (2,))
    acc[..., 1] = gravity
    a_com, r_com, r_link = [], [], []
    for i in range(n):
        e = np.stack([c[..., i], s[..., i]], axis=-1)
        p = _perp(c[..., i], s[..., i])
        rc = model.link_com_offset[i] * e
        rl = model.link_length[i] * e
        w2 = (w[..., i] ** 2)[..., None]
        a_com.append(acc + al[..., i, None] * model.link_com_offset[i] * p - w2 * rc)
        acc = acc + al[..., i, None] * model.link_length[i] * p - w2 * rl
        r_com.append(rc)
        r_link.append(rl)

    tau = np.empty(q.shape)
    f_next = np.zeros(q.shape[:-1] + (2,))
    n_next = np.zeros(q.shape[:-1])
    for i in reversed(range(n)):
        ma = model.link_mass[i] * a_com[i]
        n_i = model.link_inertia[i] * al[..., i] + n_next + _cross2(r_com[i], ma) + _cross2(r_link[i], f_next)
        f_next = ma + f_next
        n_next = n_i
        tau[..., i] = n_i
    return tau


def bias_forces(model: ArmModel, state: JointState) -> np.ndarray:
    """c(q, qdot): Coriolis/centrifugal plus gravity, so that M qddot = tau - c."""
    _require_finite("q", state.q)
    _require_finite("qdot", state.qdot)
    return _rnea(model, state.q, state.qdot, np.zeros_like(state.q), model.gravity)


def inverse_dynamics(model: ArmModel, state: JointState, qddot: np.ndarray) -> np.ndarray:
    return _rnea(model, state.q, state.qdot, np.asarray(qddot, dtype=np.float64), model.gravity)


def advance(
    model: ArmModel,
    state: JointState,
    net_force: np.ndarray,
    h: float,
    armature: Optional[np.ndarray] = None,
) -> JointState:
    """
    Semi-implicit Euler given the generalized force already net of bias
    (tau - c). Shared by every plant so their integrators agree bit for bit.
    """
    m = mass_matrix(model, state.q, armature)
    qddot = np.linalg.solve(m, net_force[..., None])[..., 0]
    qdot_next = state.qdot + h * qddot
    q_next = state.q + h * qdot_next
    return JointState(q_next, qdot_next)


def step_semi_implicit(
    model: ArmModel,
    state: JointState,
    tau: np.ndarray,
    h: float,
    armature: Optional[np.ndarray] = None,
) -> JointState:
    """
    qdot' = qdot + h M^-1 (tau - c); q' = q + h qdot'. Pure; callers flag
    divergence on the result with `is_diverged`.
    """
    if h <= 0:
        raise ValueError(f"timestep must be positive, got {h}")
    tau = np.asarray(tau, dtype=np.float64)
    _require_finite("tau", tau)
    c = bias_forces(model, state)
    return advance(model, state, tau - c, h, armature)


def ee_kinematics(model: ArmModel, state: JointState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distal tip position (x, z), velocity and absolute orientation."""
    th = link_angles(state.q)
    w = np.cumsum(state.qdot, axis=-1)
    c, s = np.cos(th), np.sin(th)
    l = model.link_length
    x = np.sum(l * c, axis=-1)
    z = model.base_height + np.sum(l * s, axis=-1)
    vx = -np.sum(l * s * w, axis=-1)
    vz = np.sum(l * c * w, axis=-1)
    return np.stack([x, z], axis=-1), np.stack([vx, vz], axis=-1), th[..., -1]


def bucket_normal(orientation: np.ndarray) -> np.ndarray:
    """Opening direction of a bucket on the EE local +z axis, in world (x, z)."""
    return _perp(np.cos(orientation), np.sin(orientation))


def ball_flight_distance(
    release_pos: np.ndarray,
    release_vel: np.ndarray,
    ground_z: float = 0.0,
    gravity: float = GRAVITY,
) -> np.ndarray:
    """
    Signed horizontal travel from release to ground impact without drag:
    d = v_x (v_z + sqrt(v_z^2 + 2 g h)) / g. Releases at or below the ground
    plane travel 0.
    """
    pos = np.asarray(release_pos, dtype=np.float64)
    vel = np.asarray(release_vel, dtype=np.float64)
    height = pos[..., 1] - ground_z
    vz = vel[..., 1]
    safe_h = np.maximum(height, 0.0)
    t_flight = (vz + np.sqrt(vz * vz + 2.0 * gravity * safe_h)) / gravity
    return np.where(height > 0.0, vel[..., 0] * t_flight, 0.0)


def ballistic_step(ball: BallState, h: float, gravity: float = GRAVITY) -> BallState:
    """Free-flight update for detached balls; attached ones are left to the caller."""
    vel = ball.velocity.copy()
    vel[..., 1] = vel[..., 1] - h * gravity
    pos = ball.position + h * vel
    attached = np.asarray(ball.attached)
    return BallState(
        position=np.where(attached[..., None], ball.position, pos),
        velocity=np.where(attached[..., None], ball.velocity, vel),
        attached=attached,
    )


def kinetic_energy(model: ArmModel, state: JointState, armature: Optional[np.ndarray] = None) -> np.ndarray:
    m = mass_matrix(model, state.q, armature)
    return 0.5 * np.einsum("...i,...ij,...j->...", state.qdot, m, state.qdot)


def potential_energy(model: ArmModel, q: np.ndarray) -> np.ndarray:
    th = link_angles(q)
    s = np.sin(th)
    z_joint = np.concatenate([np.zeros(q.shape[:-1] + (1,)), np.cumsum(model.link_length * s, axis=-1)[..., :-1]], axis=-1)
    z_com = z_joint + model.link_com_offset * s
    return model.gravity * np.sum(model.link_mass * z_com, axis=-1)


def arm_model_from_dict(d: Dict[str, Any]) -> ArmModel:
    return ArmModel(**d)


def as_state(q: Sequence[float], qdot: Optional[Sequence[float]] = None) -> JointState:
    q = np.asarray(q, dtype=np.float64)
    return JointState(q, np.zeros_like(q) if qdot is None else np.asarray(qdot, dtype=np.float64))
