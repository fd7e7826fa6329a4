"""True-chain forward dynamics and fixed-step integration.

The plant obeys ``M(q) ddq + b(q, dq, F_tip) + B dq = tau`` where ``b`` is the
recursive inverse dynamics at zero joint acceleration (including gravity and
the wrench the tool exerts on its surroundings) and ``B`` the viscous joint
friction.  All routines broadcast over a leading run dimension.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..body import body_wrench, mass_matrix
from ..chain import (
    ChainModel,
    project_torques,
    propagate_force,
    propagate_required,
    joint_transforms,
    tool_twist,
    world_frames,
)
from ..spatial import mv

# Maps the stage kinematics to the tool wrench (tool frame), or None for free motion.
TipWrenchFn = Callable[["Kinematics"], Optional[np.ndarray]]


@dataclass
class Kinematics:
    R_rel: np.ndarray
    p_rel: np.ndarray
    Rw: np.ndarray
    pw: np.ndarray


def kinematics(model: ChainModel, q) -> Kinematics:
    R_rel, p_rel = joint_transforms(model, q)
    Rw, pw = world_frames(model, R_rel, p_rel)
    return Kinematics(R_rel, p_rel, Rw, pw)


def body_gravity(model: ChainModel, Rw):
    return np.einsum("...kji,j->...ki", Rw[..., : model.n, :, :], model.gravity)


def body_jacobians(model: ChainModel, kin: Kinematics):
    """``(..., n_joint, n_body, 6)``: twist of each body per unit joint rate."""
    n = model.n
    basis = np.broadcast_to(np.eye(n), kin.R_rel.shape[:-3] + (n, n))
    Vb, _ = propagate_required(model, kin.R_rel[..., None, :, :, :], kin.p_rel[..., None, :, :],
                               basis, basis, np.zeros_like(basis))
    return Vb


class ChainPlant:
    def __init__(self, model: ChainModel):
        self.model = model
        self.body_mass = mass_matrix(model.phi)  # (n, 6, 6), constant in body frames

    def mass_matrix(self, kin: Kinematics):
        Jb = body_jacobians(self.model, kin)
        MJ = np.einsum("iab,...kib->...kia", self.body_mass, Jb)
        return np.einsum("...jia,...kia->...jk", Jb, MJ)

    def inverse_dynamics(self, kin: "Kinematics", qdot, qddot, tip_wrench=None):
        m = self.model
        V, dV = propagate_required(m, kin.R_rel, kin.p_rel, qdot, qdot, qddot)
        F_star = body_wrench(m.phi, dV, V, V, body_gravity(m, kin.Rw))
        F = propagate_force(m, kin.R_rel, kin.p_rel, F_star, tip_wrench)
        return project_torques(m, F) + m.friction * qdot

    def forward_dynamics(self, q, qdot, tau, tip_wrench=None):
        return self.evaluate(q, qdot, tau, lambda kin: tip_wrench)[0]

    def evaluate(self, q, qdot, tau, tip_wrench_fn: Optional[TipWrenchFn] = None):
        """Joint accelerations plus ``(actuator, friction, tool)`` powers at one state."""
        m = self.model
        kin = kinematics(m, q)
        w = None if tip_wrench_fn is None else tip_wrench_fn(kin)
        V, dV = propagate_required(m, kin.R_rel, kin.p_rel, qdot, qdot, np.zeros_like(qdot))
        F_star = body_wrench(m.phi, dV, V, V, body_gravity(m, kin.Rw))
        F = propagate_force(m, kin.R_rel, kin.p_rel, F_star, w)
        bias = project_torques(m, F) + m.friction * qdot
        ddq = np.linalg.solve(self.mass_matrix(kin), (tau - bias)[..., None])[..., 0]
        p_tip = np.zeros(np.shape(qdot)[:-1])
        if w is not None:
            p_tip = np.einsum("...i,...i->...", tool_twist(m, V[..., -1, :]), w)
        power = np.stack([np.einsum("...i,...i->...", tau, qdot),
                          np.einsum("i,...i->...", m.friction, qdot * qdot), p_tip], axis=-1)
        return ddq, power

    def energy(self, q, qdot):
        """Kinetic plus gravitational potential energy."""
        kin = kinematics(self.model, q)
        M = self.mass_matrix(kin)
        ke = 0.5 * np.einsum("...i,...ij,...j->...", qdot, M, qdot)
        m = self.model.phi[:, 0]
        com = kin.pw[..., : self.model.n, :] + mv(kin.Rw[..., : self.model.n, :, :],
                                                  self.model.phi[:, 1:4] / m[:, None])
        pe = -np.einsum("...ki,i,k->...", com, self.model.gravity, m)
        return ke + pe

    def step(self, q, qdot, tau, dt: float, tip_wrench_fn: Optional[TipWrenchFn] = None):
        """One RK4 step with ``tau`` held.

        Returns ``(q, qdot, work, ddq0)``: ``work`` stacks the energy supplied
        by the actuators, lost to joint friction and delivered through the tool
        over the step; ``ddq0`` is the joint acceleration at the step start.
        """
        def rates(qq, dq):
            ddq, power = self.evaluate(qq, dq, tau, tip_wrench_fn)
            return dq, ddq, power

        k1 = rates(q, qdot)
        k2 = rates(q + 0.5 * dt * k1[0], qdot + 0.5 * dt * k1[1])
        k3 = rates(q + 0.5 * dt * k2[0], qdot + 0.5 * dt * k2[1])
        k4 = rates(q + dt * k3[0], qdot + dt * k3[1])
        comb = lambda i: dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        return q + comb(0), qdot + comb(1), comb(2), k1[1]
