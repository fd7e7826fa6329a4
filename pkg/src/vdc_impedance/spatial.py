"""Spatial (6D) vector algebra.

Spatial vectors are stacked linear-then-angular: a velocity twist is
``[v, w]`` and a force wrench is ``[f, m]``.  A transform ``{A->B}`` stores
the rotation of frame B relative to A and the offset from A's origin to B's
origin, both expressed in A.  Its 6x6 operator is

    U = [[R,       0],
         [skew(r) R, R]]

and maps forces from B to A (``F_A = U F_B``) while ``U^T`` maps velocities
from A to B.

The array-level helpers (``skew``, ``assemble``, ``velocity_to_child`` ...)
broadcast over leading dimensions and are what the simulation loop uses.
``SpatialVector`` and ``SpatialTransform`` wrap them with frame bookkeeping.
"""

from dataclasses import dataclass
import numpy as np

ORTHO_TOL = 1e-9


class FrameMismatchError(ValueError):
    pass


class KindMismatchError(ValueError):
    pass


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == cross(v, w)``.  Broadcasts."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape + (3,))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def cross(a, b):
    """Cross product over the last axis; much cheaper than ``np.cross`` for small batches."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def mv(A, x):
    """Batched matrix-vector product."""
    return (A @ x[..., None])[..., 0]


def assemble(R, r):
    """6x6 operator ``[[R, 0], [skew(r) R, R]]`` (broadcasts)."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    shape = np.broadcast_shapes(R.shape[:-2], r.shape[:-1])
    U = np.zeros(shape + (6, 6))
    U[..., :3, :3] = R
    U[..., 3:, 3:] = R
    U[..., 3:, :3] = skew(r) @ R
    return U


def velocity_to_child(R, r, V):
    """``U^T V`` without forming U: velocity of the child frame origin in child axes."""
    v, w = V[..., :3], V[..., 3:]
    Rt = np.swapaxes(R, -1, -2)
    out = np.empty(np.broadcast_shapes(R.shape[:-2], V.shape[:-1]) + (6,))
    out[..., :3] = mv(Rt, v + cross(w, r))
    out[..., 3:] = mv(Rt, w)
    return out


def force_to_parent(R, r, F):
    """``U F`` without forming U: child wrench re-expressed at the parent origin."""
    f = mv(R, F[..., :3])
    m = mv(R, F[..., 3:])
    out = np.empty(f.shape[:-1] + (6,))
    out[..., :3] = f
    out[..., 3:] = m + cross(r, f)
    return out


def crm(V):
    """Motion cross-product operator for linear-first twists.

    ``crm(V) @ W`` is the rate of change of a twist W carried by a frame moving
    with V.  ``crf(V) = -crm(V).T`` is the force counterpart.
    """
    v, w = V[..., :3], V[..., 3:]
    out = np.zeros(V.shape[:-1] + (6, 6))
    Sw = skew(w)
    out[..., :3, :3] = Sw
    out[..., :3, 3:] = skew(v)
    out[..., 3:, 3:] = Sw
    return out


def crm_apply(V, W):
    """``crm(V) @ W`` computed with cross products."""
    v, w = V[..., :3], V[..., 3:]
    a, b = W[..., :3], W[..., 3:]
    out = np.empty(np.broadcast_shapes(V.shape, W.shape))
    out[..., :3] = cross(w, a) + cross(v, b)
    out[..., 3:] = cross(w, b)
    return out


def crf(V):
    return -np.swapaxes(crm(V), -1, -2)


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and np.linalg.det(R) > 0)


def gram_schmidt(R):
    """Closest-ish proper rotation by Gram-Schmidt on the columns."""
    x = R[:, 0] / np.linalg.norm(R[:, 0])
    y = R[:, 1] - x * (x @ R[:, 1])
    y = y / np.linalg.norm(y)
    z = cross(x, y)
    return np.column_stack([x, y, z])


@dataclass(frozen=True)
class SpatialVector:
    """A twist (``kind='velocity'``) or wrench (``kind='force'``) in a named frame."""

    linear: np.ndarray
    angular: np.ndarray
    kind: str
    frame: str

    def __post_init__(self):
        if self.kind not in ("velocity", "force"):
            raise ValueError(f"unknown spatial vector kind {self.kind!r}")
        for name in ("linear", "angular"):
            arr = np.array(getattr(self, name), dtype=float).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_array(cls, arr, kind: str, frame: str) -> "SpatialVector":
        arr = np.asarray(arr, dtype=float).reshape(6)
        return cls(arr[:3], arr[3:], kind, frame)

    @classmethod
    def velocity(cls, arr, frame: str) -> "SpatialVector":
        return cls.from_array(arr, "velocity", frame)

    @classmethod
    def force(cls, arr, frame: str) -> "SpatialVector":
        return cls.from_array(arr, "force", frame)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def power(self, other: "SpatialVector") -> float:
        """Inner product of a twist with a wrench in the same frame."""
        if self.frame != other.frame:
            raise FrameMismatchError(f"{self.frame!r} vs {other.frame!r}")
        if {self.kind, other.kind} != {"velocity", "force"}:
            raise KindMismatchError("power pairs a velocity with a force")
        return float(self.vector @ other.vector)


@dataclass(frozen=True)
class SpatialTransform:
    """Frame change ``{source -> target}``: rotation and offset of target in source."""

    rotation: np.ndarray
    offset: np.ndarray
    source: str = "A"
    target: str = "B"

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        r = np.array(self.offset, dtype=float).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "offset", r)

    @classmethod
    def identity(cls, frame: str = "A") -> "SpatialTransform":
        return cls(np.eye(3), np.zeros(3), frame, frame)

    @property
    def matrix(self) -> np.ndarray:
        return assemble(self.rotation, self.offset)

    def inverse(self) -> "SpatialTransform":
        Rt = self.rotation.T
        return SpatialTransform(Rt, -Rt @ self.offset, self.target, self.source)


def compose(t1: SpatialTransform, t2: SpatialTransform) -> SpatialTransform:
    """Chain ``{A->B}`` with ``{B->C}`` into ``{A->C}``."""
    if t1.target != t2.source:
        raise FrameMismatchError(f"cannot chain {t1.source}->{t1.target} with {t2.source}->{t2.target}")
    R = t1.rotation @ t2.rotation
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
        R = gram_schmidt(R)
    r = t1.offset + t1.rotation @ t2.offset
    return SpatialTransform(R, r, t1.source, t2.target)


def transform_velocity(t: SpatialTransform, vA: SpatialVector) -> SpatialVector:
    """``V_B = U^T V_A``."""
    if vA.kind != "velocity":
        raise KindMismatchError("transform_velocity expects a velocity")
    if vA.frame != t.source:
        raise FrameMismatchError(f"velocity in {vA.frame!r}, transform from {t.source!r}")
    out = velocity_to_child(t.rotation, t.offset, vA.vector)
    return SpatialVector.velocity(out, t.target)


def transform_force(t: SpatialTransform, fB: SpatialVector) -> SpatialVector:
    """``F_A = U F_B``."""
    if fB.kind != "force":
        raise KindMismatchError("transform_force expects a force")
    if fB.frame != t.target:
        raise FrameMismatchError(f"force in {fB.frame!r}, transform into {t.target!r}")
    out = force_to_parent(t.rotation, t.offset, fB.vector)
    return SpatialVector.force(out, t.source)

