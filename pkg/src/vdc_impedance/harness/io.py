"""Telemetry CSV, run summaries and sweep reports.

Floats are written with 17 significant digits so that a CSV round-trips
exactly and repeated runs produce byte-identical files.
"""

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_columns(path, names: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    """Write equal-length 1-D columns as a CSV with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.zeros((0, 0))
    with path.open("w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_columns(path) -> Dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def telemetry_table(series: Dict[str, np.ndarray], run: int = 0):
    """Flatten batched series ``(steps, B, width)`` of one run into named columns."""
    names: List[str] = []
    cols: List[np.ndarray] = []
    for key, arr in series.items():
        a = arr[:, run, :]
        if a.shape[1] == 1:
            names.append(key)
            cols.append(a[:, 0])
            continue
        for i in range(a.shape[1]):
            names.append(f"{key}_{i}")
            cols.append(a[:, i])
    return names, cols


def write_telemetry(path, series: Dict[str, np.ndarray], run: int = 0) -> Path:
    names, cols = telemetry_table(series, run)
    return write_columns(path, names, cols)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_records(path, records: Iterable[Dict[str, object]], fields: Sequence[str]) -> Path:
    """CSV of flat records; missing values become empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(fields) + "\n")
        for r in records:
            cells = []
            for f in fields:
                v = r.get(f)
                if v is None:
                    cells.append("")
                elif isinstance(v, bool):
                    cells.append(str(v).lower())
                elif isinstance(v, (float, np.floating)):
                    cells.append(_fmt(float(v)))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
    return path
