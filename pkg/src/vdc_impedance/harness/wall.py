"""Spring-only virtual wall along one task axis."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VirtualWall:
    """Wall at ``z_e`` on task channel ``axis``; ``side=+1`` means the obstacle
    occupies ``z > z_e``.  The force is ``K_e (z - z_e)``: the push the
    end-effector exerts on the wall."""

    K_e: float
    z_e: float
    axis: int = 2
    side: int = 1
    bilateral: bool = False

    def __post_init__(self):
        if not np.all(np.asarray(self.K_e) > 0):
            raise ValueError("wall stiffness must be positive")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")
        if not 0 <= self.axis < 3:
            raise ValueError("wall axis must be a translational channel")

    def penetration(self, pose):
        return self.side * (np.asarray(pose, float)[..., self.axis] - self.z_e)


def wall_scalar(wall: VirtualWall, pose):
    """Signed contact force along the wall axis (zero off contact unless bilateral)."""
    z = np.asarray(pose, dtype=float)[..., wall.axis]
    f = wall.K_e * (z - wall.z_e)
    if wall.bilateral:
        return f
    return np.where(wall.penetration(pose) > 0, f, 0.0)


def wall_force(wall: VirtualWall, pose):
    """Task-space wrench (6-vector) with only the wall channel populated."""
    f = wall_scalar(wall, pose)
    out = np.zeros(np.shape(f) + (6,))
    out[..., wall.axis] = f
    return out
