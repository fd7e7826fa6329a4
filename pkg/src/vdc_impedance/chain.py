"""Serial-chain kinematics with one frame per body at each joint.

Frame ``i`` is attached to body ``i`` at the axis of joint ``i``; joint ``i``
moves it relative to frame ``i-1`` (frame 0 is the fixed base).  The tool
frame ``T`` is rigidly attached to the last body.  Every array routine here
broadcasts over leading batch dimensions of ``q`` so that independent
simulations can be stepped together.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .body import InertialParams
from .spatial import (
    SpatialTransform,
    crm_apply,
    cross,
    force_to_parent,
    mv,
    skew,
    velocity_to_child,
)

EULER_SINGULAR_TOL = 1e-6
PINV_DAMPING = 0.01
PINV_THRESHOLD = 0.05
JDOT_FD_STEP = 1e-6


class RepresentationSingularityError(RuntimeError):
    """Euler XYZ pitch reached +-pi/2; pose rates are undefined there."""


@dataclass
class JointDesc:
    name: str
    kind: str = "revolute"
    axis: Sequence[float] = (0.0, 0.0, 1.0)
    origin_rotation: Optional[np.ndarray] = None
    origin_offset: Sequence[float] = (0.0, 0.0, 0.0)
    lower: float = -math.inf
    upper: float = math.inf
    friction: float = 0.0
    parent_frame: str = ""
    child_frame: str = ""

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"joint {self.name!r}: unknown kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name!r}: axis must be a unit vector")
        if not self.lower < self.upper:
            raise ValueError(f"joint {self.name!r}: lower limit must be below upper")
        self.axis = axis
        R0 = np.eye(3) if self.origin_rotation is None else np.asarray(self.origin_rotation, dtype=float)
        self.origin_rotation = R0
        self.origin_offset = np.asarray(self.origin_offset, dtype=float)
        self.child_frame = self.child_frame or self.name

    @property
    def screw(self) -> np.ndarray:
        z = np.zeros(3)
        return np.concatenate([z, self.axis] if self.kind == "revolute" else [self.axis, z])


@dataclass
class ChainState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have the same shape")


@dataclass
class ChainModel:
    joints: List[JointDesc]
    bodies: List[InertialParams]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    tool_rotation: Optional[np.ndarray] = None
    tool_offset: Sequence[float] = (0.0, 0.0, 0.0)
    base_frame: str = "base"
    tip_frame: str = "T"

    def __post_init__(self):
        if len(self.joints) != len(self.bodies):
            raise ValueError("body count must equal joint count")
        if not self.joints:
            raise ValueError("chain needs at least one joint")
        parent = self.base_frame
        for j in self.joints:
            j.parent_frame = j.parent_frame or parent
            if j.parent_frame != parent:
                raise ValueError(f"joint {j.name!r} does not continue the chain from {parent!r}")
            parent = j.child_frame
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.tool_rotation = np.eye(3) if self.tool_rotation is None else np.asarray(self.tool_rotation, float)
        self.tool_offset = np.asarray(self.tool_offset, dtype=float)
        # cached arrays for the vectorised routines
        self.screws = np.array([j.screw for j in self.joints])
        self.axes = np.array([j.axis for j in self.joints])
        self.R0 = np.array([j.origin_rotation for j in self.joints])
        self.p0 = np.array([j.origin_offset for j in self.joints])
        self.revolute = np.array([j.kind == "revolute" for j in self.joints])
        self.friction = np.array([j.friction for j in self.joints])
        self.phi = np.array([b.phi for b in self.bodies])
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        self._K = skew(self.axes)
        self._K2 = self._K @ self._K

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def frames(self) -> List[str]:
        return [j.child_frame for j in self.joints] + [self.tip_frame]

    def with_bodies(self, bodies: Sequence[InertialParams]) -> "ChainModel":
        return ChainModel(self.joints, list(bodies), self.gravity, self.tool_rotation,
                          self.tool_offset, self.base_frame, self.tip_frame)

    def check_limits(self, q) -> bool:
        q = np.asarray(q)
        ok = bool(np.all((q >= self.lower) & (q <= self.upper)))
        if not ok:
            warnings.warn("joint limits exceeded", RuntimeWarning, stacklevel=2)
        return ok


# --------------------------------------------------------------------------
# kinematics


def joint_transforms(model: ChainModel, q):
    """Parent-to-child rotations ``(..., n, 3, 3)`` and offsets ``(..., n, 3)``."""
    q = np.asarray(q, dtype=float)
    s = np.sin(q)[..., None, None]
    c = np.cos(q)[..., None, None]
    rev = model.revolute[:, None, None]
    Rj = np.eye(3) + np.where(rev, s * model._K + (1.0 - c) * model._K2, 0.0)
    R = model.R0 @ Rj
    slide = np.where(model.revolute, 0.0, q)[..., None] * model.axes
    p = model.p0 + mv(model.R0, slide)
    return R, p


def world_frames(model: ChainModel, R_rel, p_rel):
    """World rotations/origins of every body frame plus the tool frame (n+1 entries)."""
    n = model.n
    batch = R_rel.shape[:-3]
    Rw = np.empty(batch + (n + 1, 3, 3))
    pw = np.empty(batch + (n + 1, 3))
    R = np.broadcast_to(np.eye(3), batch + (3, 3))
    p = np.zeros(batch + (3,))
    for i in range(n):
        p = p + mv(R, p_rel[..., i, :])
        R = R @ R_rel[..., i, :, :]
        Rw[..., i, :, :] = R
        pw[..., i, :] = p
    Rw[..., n, :, :] = R @ model.tool_rotation
    pw[..., n, :] = p + mv(R, model.tool_offset)
    return Rw, pw


def euler_xyz(R):
    """Intrinsic XYZ angles ``(alpha, beta, theta)`` with ``R = Rx Ry Rz``."""
    a = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    b = np.arcsin(np.clip(R[..., 0, 2], -1.0, 1.0))
    c = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    return np.stack([a, b, c], axis=-1)


def rotation_xyz(angles):
    a, b, c = (np.asarray(angles, dtype=float)[..., k] for k in range(3))
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    R = np.empty(np.shape(a) + (3, 3))
    R[..., 0, 0] = cb * cc
    R[..., 0, 1] = -cb * sc
    R[..., 0, 2] = sb
    R[..., 1, 0] = ca * sc + sa * sb * cc
    R[..., 1, 1] = ca * cc - sa * sb * sc
    R[..., 1, 2] = -sa * cb
    R[..., 2, 0] = sa * sc - ca * sb * cc
    R[..., 2, 1] = sa * cc + ca * sb * sc
    R[..., 2, 2] = ca * cb
    return R


def euler_rate_matrix(angles):
    """``E`` with ``omega_world = E @ d(alpha, beta, theta)/dt``."""
    a, b = angles[..., 0], angles[..., 1]
    E = np.zeros(a.shape + (3, 3))
    E[..., 0, 0] = 1.0
    E[..., 0, 2] = np.sin(b)
    E[..., 1, 1] = np.cos(a)
    E[..., 1, 2] = -np.sin(a) * np.cos(b)
    E[..., 2, 1] = np.sin(a)
    E[..., 2, 2] = np.cos(a) * np.cos(b)
    return E


def pose_of(R, p):
    return np.concatenate([p, euler_xyz(R)], axis=-1)


@dataclass
class FKResult:
    transforms: List[SpatialTransform]  # base -> each body frame, then base -> T
    pose: np.ndarray


def forward_kinematics(model: ChainModel, state: ChainState) -> FKResult:
    q = np.asarray(state.q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint positions, got shape {q.shape}")
    Rw, pw = world_frames(model, *joint_transforms(model, q))
    names = model.frames
    transforms = [SpatialTransform(Rw[i], pw[i], model.base_frame, names[i]) for i in range(model.n + 1)]
    return FKResult(transforms, pose_of(Rw[-1], pw[-1]))


# --------------------------------------------------------------------------
# recursive propagation


def propagate_velocity(model: ChainModel, q, qdot, R_rel=None, p_rel=None, base_velocity=None):
    """Body-frame twists ``V_i = s_i qdot_i + U_i^T V_{i-1}`` from base to tip.

    Passing required joint rates gives the required twists.
    """
    if R_rel is None:
        R_rel, p_rel = joint_transforms(model, q)
    qdot = np.asarray(qdot, dtype=float)
    V = np.empty(qdot.shape + (6,))
    prev = np.zeros(qdot.shape[:-1] + (6,)) if base_velocity is None else np.asarray(base_velocity, float)
    for i in range(model.n):
        prev = velocity_to_child(R_rel[..., i, :, :], p_rel[..., i, :], prev) + model.screws[i] * qdot[..., i, None]
        V[..., i, :] = prev
    return V


def propagate_required(model: ChainModel, R_rel, p_rel, qdot, qdot_r, qddot_r):
    """Required twists and their time derivatives along the actual motion.

    ``dV_r/dt = U^T dV_r,parent/dt + s qddot_r + crm(U^T V_r,parent)(s qdot)``;
    the last term comes from the joint transform turning with the actual rate.
    """
    qdot_r = np.asarray(qdot_r, dtype=float)
    Vr = np.empty(qdot_r.shape + (6,))
    dVr = np.empty(qdot_r.shape + (6,))
    prev_v = np.zeros(qdot_r.shape[:-1] + (6,))
    prev_a = np.zeros(qdot_r.shape[:-1] + (6,))
    for i in range(model.n):
        R, r = R_rel[..., i, :, :], p_rel[..., i, :]
        carried = velocity_to_child(R, r, prev_v)
        s = model.screws[i]
        prev_v = carried + s * qdot_r[..., i, None]
        prev_a = (velocity_to_child(R, r, prev_a) + s * qddot_r[..., i, None]
                  + crm_apply(carried, s * qdot[..., i, None]))
        Vr[..., i, :] = prev_v
        dVr[..., i, :] = prev_a
    return Vr, dVr


def propagate_force(model: ChainModel, R_rel, p_rel, F_star, tip_wrench=None):
    """Cutting-point wrenches ``F_i = F*_i + U_{i+1} F_{i+1}`` from tip to base.

    ``tip_wrench`` is the wrench the tool frame passes on (expressed in T).
    """
    F_star = np.asarray(F_star, dtype=float)
    F = np.empty_like(F_star)
    n = model.n
    if tip_wrench is None:
        nxt = np.zeros(F_star.shape[:-2] + (6,))
    else:
        nxt = force_to_parent(model.tool_rotation, model.tool_offset, np.asarray(tip_wrench, float))
    for i in range(n - 1, -1, -1):
        F[..., i, :] = F_star[..., i, :] + nxt
        if i > 0:
            nxt = force_to_parent(R_rel[..., i, :, :], p_rel[..., i, :], F[..., i, :])
    return F


def project_torques(model: ChainModel, F):
    """``tau_i = s_i^T F_i``."""
    return np.einsum("ij,...ij->...i", model.screws, F)


def tool_twist(model: ChainModel, V_last):
    return velocity_to_child(model.tool_rotation, model.tool_offset, V_last)


# --------------------------------------------------------------------------
# Jacobian


@dataclass
class JacobianResult:
    J: np.ndarray
    Jdot: np.ndarray
    singular: np.ndarray


def _geometric(model, Rw, pw):
    """World-frame tip Jacobian rows ``[v_tip; omega]``."""
    z = mv(Rw[..., :-1, :, :], model.axes)  # (..., n, 3)
    lever = pw[..., -1:, :] - pw[..., :-1, :]
    rev = model.revolute[:, None]
    Jv = np.where(rev, cross(z, lever), z)
    Jw = np.where(rev, z, 0.0)
    return np.swapaxes(np.concatenate([Jv, Jw], axis=-1), -1, -2), z, lever


def _euler_map(Rw_tip):
    ang = euler_xyz(Rw_tip)
    cb = np.cos(ang[..., 1])
    singular = np.abs(cb) < EULER_SINGULAR_TOL
    safe = ang.copy()
    safe[..., 1] = np.where(singular, 0.0, ang[..., 1])
    E = euler_rate_matrix(safe)
    return ang, E, np.linalg.inv(E), singular


def jacobian_only(model: ChainModel, q):
    R_rel, p_rel = joint_transforms(model, q)
    Rw, pw = world_frames(model, R_rel, p_rel)
    Jg, _, _ = _geometric(model, Rw, pw)
    _, _, Einv, singular = _euler_map(Rw[..., -1, :, :])
    J = Jg.copy()
    J[..., 3:, :] = Einv @ Jg[..., 3:, :]
    return J, singular


def jacobian_from_frames(model: ChainModel, Rw, pw, qdot, q=None) -> JacobianResult:
    """Pose-rate Jacobian ``dX/dt = J qdot`` (Euler XYZ rates) and its time derivative."""
    qdot = np.asarray(qdot, dtype=float)
    Jg, z, lever = _geometric(model, Rw, pw)
    ang, E, Einv, singular = _euler_map(Rw[..., -1, :, :])
    J = Jg.copy()
    J[..., 3:, :] = Einv @ Jg[..., 3:, :]
    if model.revolute.all():
        # world angular rates of each body and linear rates of each joint origin
        w_each = np.cumsum(z * qdot[..., None], axis=-2)
        v_tip = mv(Jg[..., :3, :], qdot)
        # velocity of joint origin i: contributions of joints j < i at that point
        v_org = np.zeros_like(lever)
        for i in range(1, model.n):
            arm = pw[..., i:i + 1, :] - pw[..., :i, :]
            v_org[..., i, :] = np.sum(cross(z[..., :i, :], arm) * qdot[..., :i, None], axis=-2)
        zdot = cross(w_each, z)
        dJv = cross(zdot, lever) + cross(z, v_tip[..., None, :] - v_org)
        dJg = np.swapaxes(np.concatenate([dJv, zdot], axis=-1), -1, -2)
        omega = mv(Jg[..., 3:, :], qdot)
        rates = mv(Einv, omega)
        a, b = ang[..., 0], np.where(singular, 0.0, ang[..., 1])
        da, db = rates[..., 0], rates[..., 1]
        Edot = np.zeros(E.shape)
        Edot[..., 0, 2] = np.cos(b) * db
        Edot[..., 1, 1] = -np.sin(a) * da
        Edot[..., 1, 2] = -np.cos(a) * np.cos(b) * da + np.sin(a) * np.sin(b) * db
        Edot[..., 2, 1] = np.cos(a) * da
        Edot[..., 2, 2] = -np.sin(a) * np.cos(b) * da - np.cos(a) * np.sin(b) * db
        dEinv = -Einv @ Edot @ Einv
        Jdot = dJg.copy()
        Jdot[..., 3:, :] = Einv @ dJg[..., 3:, :] + dEinv @ Jg[..., 3:, :]
    else:
        if q is None:
            raise ValueError("finite-difference Jdot needs q")
        h = JDOT_FD_STEP
        Jp, _ = jacobian_only(model, q + h * qdot)
        Jm, _ = jacobian_only(model, q - h * qdot)
        Jdot = (Jp - Jm) / (2 * h)
    return JacobianResult(J, Jdot, singular)


def jacobian(model: ChainModel, state: ChainState) -> JacobianResult:
    """Euler-rate Jacobian and its derivative for one state; raises at the pitch singularity."""
    q = np.asarray(state.q, dtype=float)
    Rw, pw = world_frames(model, *joint_transforms(model, q))
    res = jacobian_from_frames(model, Rw, pw, state.qdot, q)
    if np.any(res.singular):
        raise RepresentationSingularityError("Euler XYZ pitch at +-pi/2")
    return res


def pinv_dls(J, damping: float = PINV_DAMPING, threshold: float = PINV_THRESHOLD):
    """Pseudo-inverse; damped least squares when the smallest singular value < threshold."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    smin = s[..., -1:]
    with np.errstate(divide="ignore"):
        plain = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    damped = s / (s * s + damping * damping)
    inv_s = np.where(smin < threshold, damped, plain)
    return np.swapaxes(Vt, -1, -2) @ (inv_s[..., :, None] * np.swapaxes(U, -1, -2))
