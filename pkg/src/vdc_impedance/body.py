"""Single rigid-body dynamics in a body-fixed frame.

The inertial parameter vector is ``phi = (m, hx, hy, hz, Ixx, Iyy, Izz, Ixy,
Ixz, Iyz)`` where ``h = m c`` is the first mass moment and ``I`` the rotational
inertia about the frame origin.

The equation of motion of a body whose frame moves with twist ``V = [v, w]``
is ``M dV/dt + C(w) V + G = F*`` with

    M = [[m 1,      -skew(h)],
         [skew(h),   I      ]]
    C = [[m skew(w),          -skew(w) skew(h)],
         [skew(h) skew(w),  (skew(w) I + I skew(w) - skew(I w)) / 2]]
    G = -[m g, h x g]

``C`` is skew-symmetric, so with the constant body-frame ``M`` the usual
``dM/dt - 2C`` antisymmetry holds.  ``G`` is the wrench needed to hold the
body against gravity ``g`` (expressed in the body frame).

Gravity is folded into the regressor by shifting the linear acceleration:
``Y(dV, V_r, V, g) phi == M dV + C(w) V_r + G``.
"""

from dataclasses import dataclass

import numpy as np

from .spatial import cross, mv, skew

# vech ordering of the rotational inertia inside phi
VECH = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class InconsistentParametersError(ValueError):
    """Pseudo-inertia of the parameter vector is not positive definite."""


def inertia_from_vech(v):
    v = np.asarray(v, dtype=float)
    I = np.empty(v.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(VECH):
        I[..., i, j] = v[..., k]
        I[..., j, i] = v[..., k]
    return I


def vech(I):
    I = np.asarray(I, dtype=float)
    return np.stack([I[..., i, j] for i, j in VECH], axis=-1)


@dataclass(frozen=True)
class InertialParams:
    mass: float
    first_moment: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        h = np.array(self.first_moment, dtype=float).reshape(3)
        I = np.array(self.inertia, dtype=float).reshape(3, 3)
        if np.abs(I - I.T).max() > 1e-12:
            raise ValueError("rotational inertia must be symmetric")
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "first_moment", h)
        object.__setattr__(self, "inertia", I)

    @property
    def phi(self) -> np.ndarray:
        return np.concatenate([[self.mass], self.first_moment, vech(self.inertia)])

    @classmethod
    def from_phi(cls, phi) -> "InertialParams":
        phi = np.asarray(phi, dtype=float).reshape(10)
        return cls(phi[0], phi[1:4], inertia_from_vech(phi[4:]))

    @classmethod
    def from_com(cls, mass: float, com, inertia_com) -> "InertialParams":
        """Parameters about the frame origin from COM location and COM inertia."""
        c = np.asarray(com, dtype=float)
        Sc = skew(c)
        I = np.asarray(inertia_com, dtype=float) - mass * Sc @ Sc
        return cls(mass, mass * c, I)

    def is_consistent(self) -> bool:
        return is_consistent(self.phi)


def _as_phi(p):
    return p.phi if isinstance(p, InertialParams) else np.asarray(p, dtype=float)


def f_map(p):
    """Pseudo-inertia ``[[tr(I)/2 1 - I, h], [h^T, m]]`` of a parameter vector."""
    phi = _as_phi(p)
    I = inertia_from_vech(phi[..., 4:])
    tr = np.trace(I, axis1=-2, axis2=-1)
    L = np.zeros(phi.shape[:-1] + (4, 4))
    L[..., :3, :3] = 0.5 * tr[..., None, None] * np.eye(3) - I
    L[..., :3, 3] = phi[..., 1:4]
    L[..., 3, :3] = phi[..., 1:4]
    L[..., 3, 3] = phi[..., 0]
    return L


def f_inv(L, check: bool = True):
    """Parameter vector of a pseudo-inertia: ``I = tr(Sigma) 1 - Sigma``."""
    L = np.asarray(L, dtype=float)
    if check and np.abs(L - np.swapaxes(L, -1, -2)).max() > 1e-12 * max(1.0, np.abs(L).max()):
        raise ValueError("pseudo-inertia must be symmetric")
    Sigma = L[..., :3, :3]
    tr = np.trace(Sigma, axis1=-2, axis2=-1)
    I = tr[..., None, None] * np.eye(3) - Sigma
    return np.concatenate([L[..., 3:, 3], L[..., :3, 3], vech(I)], axis=-1)


def is_consistent(p) -> bool:
    L = f_map(p)
    try:
        np.linalg.cholesky(L)
    except np.linalg.LinAlgError:
        return False
    return True


def mass_matrix(phi):
    phi = np.asarray(phi, dtype=float)
    m = phi[..., 0]
    Sh = skew(phi[..., 1:4])
    M = np.zeros(phi.shape[:-1] + (6, 6))
    M[..., :3, :3] = m[..., None, None] * np.eye(3)
    M[..., :3, 3:] = -Sh
    M[..., 3:, :3] = Sh
    M[..., 3:, 3:] = inertia_from_vech(phi[..., 4:])
    return M


def coriolis_matrix(phi, V):
    """Skew-symmetric Coriolis/centrifugal matrix; depends on the angular rate only."""
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(V, dtype=float)[..., 3:]
    m = phi[..., 0]
    I = inertia_from_vech(phi[..., 4:])
    Sw = skew(w)
    Sh = skew(phi[..., 1:4])
    C = np.zeros(np.broadcast_shapes(phi.shape[:-1], w.shape[:-1]) + (6, 6))
    C[..., :3, :3] = m[..., None, None] * Sw
    C[..., :3, 3:] = -Sw @ Sh
    C[..., 3:, :3] = Sh @ Sw
    C[..., 3:, 3:] = 0.5 * (Sw @ I + I @ Sw - skew(mv(I, w)))
    return C


def gravity_wrench(phi, g):
    phi = np.asarray(phi, dtype=float)
    g = np.asarray(g, dtype=float)
    out = np.empty(np.broadcast_shapes(phi.shape[:-1], g.shape[:-1]) + (6,))
    out[..., :3] = -phi[..., :1] * g
    out[..., 3:] = -cross(phi[..., 1:4], g)
    return out


@dataclass(frozen=True)
class BodyDynTerms:
    M: np.ndarray
    C: np.ndarray
    G: np.ndarray

    def wrench(self, Vdot, V) -> np.ndarray:
        return self.M @ Vdot + self.C @ V + self.G


def dyn_terms(p, V, gravity) -> BodyDynTerms:
    """M, C, G of a physically consistent body; rejects inconsistent parameters."""
    phi = _as_phi(p)
    if not is_consistent(phi):
        raise InconsistentParametersError("pseudo-inertia is not positive definite")
    V = V.vector if hasattr(V, "vector") else np.asarray(V, dtype=float)
    return BodyDynTerms(mass_matrix(phi), coriolis_matrix(phi, V), gravity_wrench(phi, gravity))


def _inertia_columns(w):
    """3x6 matrix ``L(w)`` with ``I @ w == L(w) @ vech(I)``."""
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    L = np.zeros(w.shape[:-1] + (3, 6))
    L[..., 0, 0] = x
    L[..., 0, 3] = y
    L[..., 0, 4] = z
    L[..., 1, 1] = y
    L[..., 1, 3] = x
    L[..., 1, 5] = z
    L[..., 2, 2] = z
    L[..., 2, 4] = x
    L[..., 2, 5] = y
    return L


def regressor(Vdot_r, V_r, V, gravity):
    """6x10 regressor with ``Y @ phi == M Vdot_r + C(V) V_r + G``.

    With ``V_r = V`` and ``Vdot_r = dV/dt`` this is the plain body dynamics;
    with required quantities it is the required-velocity regressor.
    """
    Vdot_r = np.asarray(Vdot_r, dtype=float)
    V_r = np.asarray(V_r, dtype=float)
    V = np.asarray(V, dtype=float)
    g = np.asarray(gravity, dtype=float)
    a, dw = Vdot_r[..., :3], Vdot_r[..., 3:]
    vr, wr = V_r[..., :3], V_r[..., 3:]
    w = V[..., 3:]
    b = a - g + cross(w, vr)
    shape = np.broadcast_shapes(b.shape[:-1], dw.shape[:-1], wr.shape[:-1])
    Y = np.zeros(shape + (6, 10))
    Sw = skew(w)
    Y[..., :3, 0] = b
    Y[..., :3, 1:4] = skew(dw) + Sw @ skew(wr)
    Y[..., 3:, 1:4] = -skew(b)
    Y[..., 3:, 4:] = _inertia_columns(dw) + 0.5 * (
        Sw @ _inertia_columns(wr) + _inertia_columns(cross(w, wr)) + skew(wr) @ _inertia_columns(w)
    )
    return Y


def body_wrench(phi, Vdot_r, V_r, V, gravity):
    """``Y(Vdot_r, V_r, V, g) @ phi`` evaluated with cross products (no 6x10 matrix)."""
    phi = np.asarray(phi, dtype=float)
    m = phi[..., :1]
    h = phi[..., 1:4]
    I = inertia_from_vech(phi[..., 4:])
    a, dw = Vdot_r[..., :3], Vdot_r[..., 3:]
    vr, wr = V_r[..., :3], V_r[..., 3:]
    w = V[..., 3:]
    b = a - gravity + cross(w, vr)
    f = m * b + cross(dw, h) + cross(w, cross(wr, h))
    Iw = mv(I, w)
    Iwr = mv(I, wr)
    n = cross(h, b) + mv(I, dw) + 0.5 * (cross(w, Iwr) + mv(I, cross(w, wr)) + cross(wr, Iw))
    return np.concatenate([f, n], axis=-1)
