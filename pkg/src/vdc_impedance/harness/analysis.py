"""Post-run measures of step responses."""

from dataclasses import dataclass

import numpy as np

SETTLING_BAND = 0.02


@dataclass(frozen=True)
class StepMetrics:
    final: float
    overshoot: float       # peak beyond the final value, as a fraction of the step size
    settling_time: float   # last time the response is outside the settling band


def step_metrics(t, y, band: float = SETTLING_BAND) -> StepMetrics:
    """Overshoot and settling time of a step response ``y(t)``.

    The final value is the last sample; the band is ``band`` times the step
    size ``|y_final - y_0|``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.size < 2:
        raise ValueError("need matching time and response samples")
    y0, yf = y[0], y[-1]
    size = abs(yf - y0)
    if size == 0:
        return StepMetrics(float(yf), 0.0, 0.0)
    direction = np.sign(yf - y0)
    overshoot = max(0.0, float(np.max(direction * (y - yf))) / size)
    outside = np.flatnonzero(np.abs(y - yf) > band * size)
    settling = 0.0 if outside.size == 0 else float(t[min(outside[-1] + 1, t.size - 1)])
    return StepMetrics(float(yf), overshoot, settling)


def effort_proxy(required_acceleration, M_d) -> float:
    """RMS over time of ``|M_d Xr_ddot|``: the task force the required motion asks for."""
    a = np.asarray(required_acceleration, dtype=float)
    f = a @ np.asarray(M_d, dtype=float).T
    return float(np.sqrt(np.mean(np.sum(f * f, axis=-1))))


def relative_rms(y, reference) -> float:
    y = np.asarray(y, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return float(np.sqrt(np.mean((y - reference) ** 2)) / np.sqrt(np.mean(reference ** 2)))
