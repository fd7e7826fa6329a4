"""Body-level control and recomposition into joint torques, plus runtime monitors.

Each body gets a required net wrench ``F*_r = Y_r phi_hat + K_A (V_r - V)``.
Required wrenches are then accumulated from the tool to the base, and each
joint torque is the screw projection of the wrench at its cutting point plus
a joint friction term.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .body import body_wrench, regressor
from .chain import ChainModel, project_torques, propagate_force, propagate_required
from .spatial import FrameMismatchError, SpatialVector, mv

DEFAULT_FEEDBACK = 60.0


@dataclass(frozen=True)
class ControlGains:
    """Per-body velocity feedback matrices ``K_A`` with shape ``(n, 6, 6)``."""

    K_A: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K_A, dtype=float)
        if K.ndim == 2:
            K = K[None]
        if K.shape[-2:] != (6, 6):
            raise ValueError("feedback gains must be 6x6 per body")
        for k in K:
            if np.abs(k - k.T).max() > 1e-12 * max(1.0, np.abs(k).max()):
                raise ValueError("feedback gain must be symmetric")
            if np.linalg.eigvalsh(k).min() <= 0:
                raise ValueError("feedback gain must be positive definite")
        object.__setattr__(self, "K_A", K)

    @classmethod
    def uniform(cls, n_bodies: int, value: Union[float, np.ndarray] = DEFAULT_FEEDBACK) -> "ControlGains":
        v = np.broadcast_to(np.asarray(value, dtype=float), (6,))
        return cls(np.broadcast_to(np.diag(v), (n_bodies, 6, 6)).copy())


def required_net_force(Yr, phi_hat, K_A, V_r, V):
    """``Y_r phi_hat + K_A (V_r - V)``."""
    ff = np.einsum("...ij,...j->...i", Yr, phi_hat)
    return ff + mv(np.asarray(K_A, float), np.asarray(V_r, float) - np.asarray(V, float))


def joint_torque(screw, F_r, qdot_r: float = 0.0, friction: float = 0.0):
    """Screw projection of the required wrench plus viscous friction compensation."""
    F = F_r.vector if isinstance(F_r, SpatialVector) else np.asarray(F_r, float)
    return np.einsum("...i,...i->...", np.asarray(screw, float), F) + friction * qdot_r


def vpf(V_r, V, F_r, F):
    """Virtual power flow ``(V_r - V) . (F_r - F)`` at one cutting point."""
    vals = (V_r, V, F_r, F)
    if all(isinstance(x, SpatialVector) for x in vals):
        frames = {x.frame for x in vals}
        if len(frames) != 1:
            raise FrameMismatchError(f"quantities live in different frames: {sorted(frames)}")
        vals = tuple(x.vector for x in vals)
    V_r, V, F_r, F = (np.asarray(x, float) for x in vals)
    return np.einsum("...i,...i->...", V_r - V, F_r - F)


def stability_function(upsilon, F_d, F):
    """``-upsilon . (F_d - F)``: the tool-side virtual power under impedance control."""
    return -np.einsum("...i,...i->...", np.asarray(upsilon, float), np.asarray(F_d, float) - np.asarray(F, float))


def stability_function_from_errors(e_x_dot, e_x, psi, theta_e, theta_psi, F_d, F):
    """Same quantity written with the pose errors and pseudo-impedance state."""
    lead = -np.asarray(e_x_dot, float) - mv(np.asarray(theta_e, float), np.asarray(e_x, float)) \
        - mv(np.asarray(theta_psi, float), np.asarray(psi, float))
    return np.einsum("...i,...i->...", lead, np.asarray(F_d, float) - np.asarray(F, float))


@dataclass(frozen=True)
class EnergySplit:
    net: float
    absorbed: float
    injected: float


def passivity_energy(f_c, v, dt: float) -> EnergySplit:
    """Trapezoidal integral of contact power ``f_c v``.

    The absorbed part integrates the positive part of the power, the injected
    part its negative part, so ``net == absorbed + injected``.
    """
    f_c = np.asarray(f_c, dtype=float)
    v = np.asarray(v, dtype=float)
    if f_c.shape != v.shape:
        raise ValueError("force and velocity traces must have the same length")
    p = f_c * v
    trap = lambda x: float(0.5 * dt * np.sum(x[1:] + x[:-1])) if x.size > 1 else 0.0
    return EnergySplit(trap(p), trap(np.maximum(p, 0.0)), trap(np.minimum(p, 0.0)))


class EnergyAccumulator:
    """Step-by-step version of :func:`passivity_energy` (broadcasts over runs)."""

    def __init__(self, shape=()):
        self.absorbed = np.zeros(shape)
        self.injected = np.zeros(shape)
        self.net = np.zeros(shape)
        self._last: Optional[np.ndarray] = None

    def add(self, power, dt: float, active=True):
        power = np.where(active, power, 0.0)
        if self._last is not None:
            self.absorbed = self.absorbed + 0.5 * dt * (np.maximum(self._last, 0.0) + np.maximum(power, 0.0))
            self.injected = self.injected + 0.5 * dt * (np.minimum(self._last, 0.0) + np.minimum(power, 0.0))
            self.net = self.net + 0.5 * dt * (self._last + power)
        self._last = power


@dataclass
class RecompositionResult:
    V: np.ndarray       # actual body twists (..., n, 6)
    V_r: np.ndarray     # required body twists
    dV_r: np.ndarray    # required body accelerations
    Y: np.ndarray       # required-velocity regressors (..., n, 6, 10)
    F_star_r: np.ndarray
    F_r: np.ndarray     # required cutting-point wrenches
    tau: np.ndarray     # joint torques (..., n)


def recompose(model: ChainModel, R_rel, p_rel, Rw, qdot, qdot_r, qddot_r, phi_hat, K_A,
              tip_wrench_r=None, V=None) -> RecompositionResult:
    """Required wrenches and joint torques for the whole chain.

    ``Rw`` holds the world rotation of each body frame (used to express gravity
    in body axes).  ``tip_wrench_r`` is the required wrench the tool exerts on
    its environment, expressed in the tool frame.
    """
    Vr, dVr = propagate_required(model, R_rel, p_rel, qdot, qdot_r, qddot_r)
    if V is None:
        V, _ = propagate_required(model, R_rel, p_rel, qdot, qdot, np.zeros_like(qdot))
    g_body = np.einsum("...kji,j->...ki", Rw[..., : model.n, :, :], model.gravity)
    Y = regressor(dVr, Vr, V, g_body)
    F_star_r = required_net_force(Y, phi_hat, K_A, Vr, V)
    F_r = propagate_force(model, R_rel, p_rel, F_star_r, tip_wrench_r)
    tau = project_torques(model, F_r) + model.friction * qdot_r
    return RecompositionResult(V, Vr, dVr, Y, F_star_r, F_r, tau)


def actual_forces(model: ChainModel, R_rel, p_rel, Rw, V, dV, tip_wrench=None):
    """Cutting-point wrenches the true bodies transmit for a given motion."""
    g_body = np.einsum("...kji,j->...ki", Rw[..., : model.n, :, :], model.gravity)
    F_star = body_wrench(model.phi, dV, V, V, g_body)
    return propagate_force(model, R_rel, p_rel, F_star, tip_wrench)
