"""Second-order impedance allocation through a pseudo-impedance state.

The allocator keeps an auxiliary task-space state ``psi`` with

    dpsi/dt = Lambda psi + Gamma_p e + Gamma_v de + Gamma_f e_f

and forms the required end-effector motion

    dX_r  = dX_d  - theta_e e  - theta_psi psi
    ddX_r = ddX_d - theta_e de - theta_psi dpsi/dt.

``e = X - X_d`` is the pose error (Euler XYZ for orientation) and
``e_f = F - F_d`` the force error, ``F`` being the wrench the end-effector
exerts on its environment.  The sliding variable

    upsilon = de + theta_e e + theta_psi psi = dX - dX_r

is the velocity tracking error.  With the gains from :func:`derive_gains`,
``upsilon == 0`` implies ``M_d dde + D_d de + K_d e = -e_f``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .chain import ChainModel, jacobian_from_frames, joint_transforms, pinv_dls, world_frames
from .spatial import mv

GAIN_IDENTITY_TOL = 1e-8


def _mat(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = np.diag(a)
    if a.shape != (6, 6):
        raise ValueError(f"{name} must be 6x6 or a length-6 diagonal")
    return a


def _is_spd(A) -> bool:
    if np.abs(A - A.T).max() > 1e-12 * max(1.0, np.abs(A).max()):
        return False
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class ImpedanceSpec:
    """Target inertia/damping/stiffness plus the allocator tuning matrices."""

    M_d: np.ndarray
    D_d: np.ndarray
    K_d: np.ndarray
    Lambda: np.ndarray
    theta_psi: np.ndarray
    theta_e: np.ndarray

    def __post_init__(self):
        for name in ("M_d", "D_d", "K_d", "Lambda", "theta_psi", "theta_e"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        for name in ("M_d", "D_d", "K_d"):
            if not _is_spd(getattr(self, name)):
                raise ValueError(f"{name} must be symmetric positive definite")
        sym = 0.5 * (self.Lambda + self.Lambda.T)
        if np.linalg.eigvalsh(sym).max() > 1e-12:
            raise ValueError("Lambda must be negative semidefinite")
        if np.linalg.cond(self.theta_psi) > 1e12:
            raise ValueError("theta_psi must be nonsingular")

    @classmethod
    def diagonal(cls, M_d, D_d, K_d, Lambda, theta_psi, theta_e) -> "ImpedanceSpec":
        """Build from per-channel values; scalars are broadcast to all six channels."""
        return cls(diag6(M_d), diag6(D_d), diag6(K_d), diag6(Lambda), diag6(theta_psi), diag6(theta_e))

    @classmethod
    def default(cls) -> "ImpedanceSpec":
        """Diagonal tuning used by the shipped scenarios (z is the contact channel)."""
        return cls.diagonal(
            M_d=[1, 1, 2.2, 1, 1, 1],
            D_d=80.0,
            K_d=200.0,
            Lambda=[-40, -40, -36, -40, -40, -40],
            theta_psi=[10, 10, 15, 10, 10, 10],
            theta_e=[15, 15, 8, 20, 20, 20],
        )

    def with_inertia(self, channel: int, value: float) -> "ImpedanceSpec":
        M = self.M_d.copy()
        M[channel, channel] = value
        return ImpedanceSpec(M, self.D_d, self.K_d, self.Lambda, self.theta_psi, self.theta_e)


@dataclass(frozen=True)
class AllocatorGains:
    Gamma_p: np.ndarray
    Gamma_v: np.ndarray
    Gamma_f: np.ndarray


def gain_residuals(spec: ImpedanceSpec, gains: AllocatorGains) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals of the three coefficient identities that make ``upsilon = 0`` the target impedance."""
    tp, te, Lam = spec.theta_psi, spec.theta_e, spec.Lambda
    tp_inv = np.linalg.inv(tp)
    Md_inv = np.linalg.inv(spec.M_d)
    shaped = tp @ Lam @ tp_inv
    r_p = tp @ gains.Gamma_p - shaped @ te - Md_inv @ spec.K_d
    r_v = te - shaped + tp @ gains.Gamma_v - Md_inv @ spec.D_d
    r_f = tp @ gains.Gamma_f - Md_inv
    return r_p, r_v, r_f


def derive_gains(spec: ImpedanceSpec) -> AllocatorGains:
    tp, te, Lam = spec.theta_psi, spec.theta_e, spec.Lambda
    tp_inv = np.linalg.inv(tp)
    Md_inv = np.linalg.inv(spec.M_d)
    shaped = tp @ Lam @ tp_inv
    gains = AllocatorGains(
        Gamma_p=tp_inv @ (Md_inv @ spec.K_d + shaped @ te),
        Gamma_v=tp_inv @ (Md_inv @ spec.D_d - te + shaped),
        Gamma_f=tp_inv @ Md_inv,
    )
    scale = max(1.0, *(np.abs(m).max() for m in (Md_inv @ spec.K_d, Md_inv @ spec.D_d, shaped @ te)))
    worst = max(np.abs(r).max() for r in gain_residuals(spec, gains))
    if worst > GAIN_IDENTITY_TOL * scale:
        raise ValueError(f"gain identities violated by {worst:.3e}; tuning is ill-conditioned")
    return gains


@dataclass
class AllocatorState:
    psi: np.ndarray
    e_x: np.ndarray
    e_x_dot: np.ndarray
    e_f: np.ndarray

    def __post_init__(self):
        for name in ("psi", "e_x", "e_x_dot", "e_f"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def zeros(cls) -> "AllocatorState":
        return cls(np.zeros(6), np.zeros(6), np.zeros(6), np.zeros(6))


def psi_rate(psi, e_x, e_x_dot, e_f, gains: AllocatorGains, spec: ImpedanceSpec):
    return mv(spec.Lambda, psi) + mv(gains.Gamma_p, e_x) + mv(gains.Gamma_v, e_x_dot) + mv(gains.Gamma_f, e_f)


def psi_step(state: AllocatorState, gains: AllocatorGains, spec: ImpedanceSpec, dt: float):
    """Advance ``psi`` one RK4 step with the error inputs held over the step."""
    u = mv(gains.Gamma_p, state.e_x) + mv(gains.Gamma_v, state.e_x_dot) + mv(gains.Gamma_f, state.e_f)
    f = lambda p: mv(spec.Lambda, p) + u
    k1 = f(state.psi)
    k2 = f(state.psi + 0.5 * dt * k1)
    k3 = f(state.psi + 0.5 * dt * k2)
    k4 = f(state.psi + dt * k3)
    return state.psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def sliding_surface(state: AllocatorState, spec: ImpedanceSpec):
    return state.e_x_dot + mv(spec.theta_e, state.e_x) + mv(spec.theta_psi, state.psi)


def psi_on_surface(spec: ImpedanceSpec, e_x, e_x_dot):
    """The ``psi`` that puts the sliding variable exactly at zero."""
    rhs = np.asarray(e_x_dot, float) + mv(spec.theta_e, np.asarray(e_x, float))
    return -mv(np.linalg.inv(spec.theta_psi), rhs)


def required_cartesian(state: AllocatorState, gains: AllocatorGains, spec: ImpedanceSpec,
                       X_d, Xd_dot, Xd_ddot):
    """Required end-effector velocity and acceleration.

    ``X_d`` is accepted for interface symmetry; the errors in ``state`` are
    already measured against it.
    """
    del X_d
    dpsi = psi_rate(state.psi, state.e_x, state.e_x_dot, state.e_f, gains, spec)
    Xr_dot = Xd_dot - mv(spec.theta_e, state.e_x) - mv(spec.theta_psi, state.psi)
    Xr_ddot = Xd_ddot - mv(spec.theta_e, state.e_x_dot) - mv(spec.theta_psi, dpsi)
    return Xr_dot, Xr_ddot


def first_order_tuning(spec: ImpedanceSpec) -> Tuple[np.ndarray, np.ndarray]:
    """``(theta_e, theta_psi)`` that collapse the allocator to a damping-stiffness law."""
    D_inv = np.linalg.inv(spec.D_d)
    return spec.K_d @ D_inv, D_inv


def required_velocity_first_order(spec: ImpedanceSpec, Xd_dot, e_x, e_f):
    """Required velocity of the first-order law: the pseudo-impedance state is
    replaced by the force error and the required acceleration is dropped."""
    theta_e, theta_psi = first_order_tuning(spec)
    return Xd_dot - mv(theta_e, e_x) - mv(theta_psi, e_f)


def required_joint(model: ChainModel, q, qdot, Xr_dot, Xr_ddot,
                   J: Optional[np.ndarray] = None, Jdot: Optional[np.ndarray] = None):
    """Map required task motion to joints through the damped pseudo-inverse.

    Returns ``(qdot_r, qddot_r, singular)``.  ``Jdot`` is evaluated along the
    actual joint motion.
    """
    if J is None or Jdot is None:
        Rw, pw = world_frames(model, *joint_transforms(model, q))
        res = jacobian_from_frames(model, Rw, pw, qdot, q)
        J, Jdot, singular = res.J, res.Jdot, res.singular
    else:
        singular = np.zeros(np.shape(J)[:-2], dtype=bool)
    Jp = pinv_dls(J)
    qdot_r = (Jp @ np.asarray(Xr_dot, float)[..., None])[..., 0]
    rhs = np.asarray(Xr_ddot, float) - (Jdot @ qdot_r[..., None])[..., 0]
    qddot_r = (Jp @ rhs[..., None])[..., 0]
    return qdot_r, qddot_r, singular


def diag6(values: Sequence[float]) -> np.ndarray:
    return np.diag(np.broadcast_to(np.asarray(values, dtype=float), (6,)))
