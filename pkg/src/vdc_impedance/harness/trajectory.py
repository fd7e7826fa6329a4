"""Quintic point-to-point reference trajectories in task space."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class QuinticTrajectory:
    """Rest-to-rest motion from ``start`` to ``target`` over ``t_f`` seconds, beginning at ``t0``."""

    start: np.ndarray
    target: np.ndarray
    t_f: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.t_f > 0:
            raise ValueError("execution time must be positive")
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.start.shape != self.target.shape:
            raise ValueError("start and target must have the same shape")

    @property
    def t_end(self) -> float:
        return self.t0 + self.t_f


def _profile(tau):
    s = tau**3 * (10 - 15 * tau + 6 * tau**2)
    ds = 30 * tau**2 * (1 - tau) ** 2
    dds = 60 * tau * (1 - tau) * (1 - 2 * tau)
    return s, ds, dds


def quintic_eval(traj: QuinticTrajectory, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pose, velocity and acceleration at time ``t`` (clamped to the segment)."""
    t = np.asarray(t, dtype=float)
    tau = np.clip((t - traj.t0) / traj.t_f, 0.0, 1.0)[..., None]
    s, ds, dds = _profile(tau)
    delta = traj.target - traj.start
    return traj.start + s * delta, ds / traj.t_f * delta, dds / traj.t_f**2 * delta


@dataclass(frozen=True)
class TrajectoryPlan:
    """Consecutive quintic segments; the pose is held outside them."""

    segments: Tuple[QuinticTrajectory, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("plan needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if b.t0 < a.t_end - 1e-12:
                raise ValueError("segments overlap")

    @classmethod
    def through(cls, waypoints: Sequence[Sequence[float]], durations: Sequence[float],
                pauses: Sequence[float] = ()) -> "TrajectoryPlan":
        """Chain waypoints; ``pauses[i]`` is the dwell before segment ``i``."""
        segs: List[QuinticTrajectory] = []
        t = 0.0
        for i, tf in enumerate(durations):
            t += pauses[i] if i < len(pauses) else 0.0
            segs.append(QuinticTrajectory(waypoints[i], waypoints[i + 1], tf, t))
            t += tf
        return cls(tuple(segs))

    @property
    def horizon(self) -> float:
        return self.segments[-1].t_end

    def __call__(self, t: float):
        seg = self.segments[0]
        for s in self.segments:
            if t >= s.t0:
                seg = s
        return quintic_eval(seg, t)
