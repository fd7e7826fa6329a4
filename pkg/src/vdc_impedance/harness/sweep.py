"""Z-width sweep: largest passive wall stiffness for each contact-channel inertia.

All candidate runs of one search stage are stepped together as one batch.
For every inertia the stiffness grid is scanned upward; the last passive
point before the first failure brackets the boundary, which is then refined
by geometric bisection.  Results are merged in parameter order, so the
report does not depend on how runs were grouped.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, SweepOptions
from .io import write_columns, write_json, write_records
from .simulate import Simulator, Variant

TRACE_KEYS = ("f_c", "v", "contact", "e_c")


@dataclass
class SweepPoint:
    m_d: float
    K_e: float
    passive: bool
    summary: Dict[str, object]
    trace: Optional[Dict[str, np.ndarray]] = None


@dataclass
class SweepRow:
    m_d: float
    max_passive_K_e: Optional[float]
    first_failing_K_e: Optional[float]
    saturated: bool
    converged: bool
    rms_free_error: float
    boundary: Optional[SweepPoint] = None


@dataclass
class SweepReport:
    options: SweepOptions
    rows: List[SweepRow]
    points: List[SweepPoint] = field(default_factory=list)

    def max_passive(self) -> List[Optional[float]]:
        return [r.max_passive_K_e for r in self.rows]

    def to_dict(self) -> Dict[str, object]:
        o = self.options
        return {
            "options": {"m_d": o.m_d, "K_e_min": o.K_e_min, "K_e_max": o.K_e_max, "grid_points": o.grid_points,
                        "bisection_rounds": o.bisection_rounds, "max_bounces": o.max_bounces, "channel": o.channel},
            "rows": [{
                "m_d": r.m_d,
                "max_passive_K_e": r.max_passive_K_e,
                "first_failing_K_e": r.first_failing_K_e,
                "saturated": r.saturated,
                "converged": r.converged,
                "rms_free_error": r.rms_free_error,
                "boundary": None if r.boundary is None else r.boundary.summary,
            } for r in self.rows],
        }


def stiffness_grid(options: SweepOptions) -> np.ndarray:
    if options.grid_points < 2 or not 0 < options.K_e_min < options.K_e_max:
        raise ValueError("stiffness grid needs 0 < K_e_min < K_e_max and at least two points")
    return np.geomspace(options.K_e_min, options.K_e_max, options.grid_points)


def run_points(cfg: ExperimentConfig, pairs: Sequence[Tuple[float, float]], max_bounces: int,
               keep_traces: bool = True) -> List[SweepPoint]:
    """Simulate every ``(m_d, K_e)`` pair as one batch."""
    if not pairs:
        return []
    result = Simulator(cfg, [Variant(m, k) for m, k in pairs], record="contact").run()
    out = []
    for i, (m, k) in enumerate(pairs):
        ok = result.passive(i, max_bounces)
        trace = {key: result.trace(key, i).copy() for key in TRACE_KEYS} if keep_traces and ok else None
        out.append(SweepPoint(float(m), float(k), ok, result.summary(i), trace))
    return out


def run_zwidth_sweep(cfg: ExperimentConfig, options: Optional[SweepOptions] = None) -> SweepReport:
    opts = options or cfg.sweep
    if cfg.wall is None:
        raise ValueError("the sweep needs a wall in the configuration")
    if not opts.m_d:
        raise ValueError("inertia grid is empty")
    grid = stiffness_grid(opts)
    m_list = sorted(float(m) for m in opts.m_d)

    stage = run_points(cfg, [(m, k) for m in m_list for k in grid], opts.max_bounces)
    points = list(stage)
    by_m = {m: stage[i * len(grid):(i + 1) * len(grid)] for i, m in enumerate(m_list)}

    lo: Dict[float, Optional[SweepPoint]] = {}
    hi: Dict[float, Optional[SweepPoint]] = {}
    for m in m_list:
        row = by_m[m]
        fail = next((j for j, p in enumerate(row) if not p.passive), None)
        lo[m] = row[-1] if fail is None else (row[fail - 1] if fail > 0 else None)
        hi[m] = None if fail is None else row[fail]

    for _ in range(opts.bisection_rounds):
        open_m = [m for m in m_list if lo[m] is not None and hi[m] is not None]
        if not open_m:
            break
        mids = [math.sqrt(lo[m].K_e * hi[m].K_e) for m in open_m]
        stage = run_points(cfg, list(zip(open_m, mids)), opts.max_bounces)
        points.extend(stage)
        for m, p in zip(open_m, stage):
            if p.passive:
                lo[m] = p
            else:
                hi[m] = p

    rows = []
    for m in m_list:
        b = lo[m]
        ref = b if b is not None else by_m[m][0]
        rows.append(SweepRow(
            m_d=m,
            max_passive_K_e=None if b is None else b.K_e,
            first_failing_K_e=None if hi[m] is None else hi[m].K_e,
            saturated=hi[m] is None,
            converged=b is not None,
            rms_free_error=float(ref.summary["rms_free_error"]),
            boundary=b,
        ))
    points.sort(key=lambda p: (p.m_d, p.K_e))
    return SweepReport(opts, rows, points)


POINT_FIELDS = ("m_d", "K_e", "passive", "diverged", "bounces", "E_net", "E_absorbed", "E_injected",
                "min_S_integral", "rms_free_error", "first_contact_time")
ROW_FIELDS = ("m_d", "max_passive_K_e", "first_failing_K_e", "saturated", "converged", "rms_free_error")


def write_sweep(report: SweepReport, out_dir) -> Path:
    """Report JSON + CSV, one CSV of all evaluated points, and the boundary traces."""
    out = Path(out_dir)
    write_json(out / "zwidth_report.json", report.to_dict())
    write_records(out / "zwidth_report.csv", [{f: getattr(r, f) for f in ROW_FIELDS} for r in report.rows],
                  ROW_FIELDS)
    write_records(out / "zwidth_points.csv",
                  [dict(p.summary, m_d=p.m_d, K_e=p.K_e, passive=p.passive) for p in report.points], POINT_FIELDS)
    for r in report.rows:
        if r.boundary is not None and r.boundary.trace is not None:
            tr = r.boundary.trace
            write_columns(out / "points" / f"md{r.m_d:g}_Ke{r.boundary.K_e:.6g}.csv",
                          list(TRACE_KEYS), [tr[k] for k in TRACE_KEYS])
    return out
