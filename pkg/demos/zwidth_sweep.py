"""Largest passive wall stiffness versus contact-channel inertia (takes about two minutes)."""

import sys
from pathlib import Path

from vdc_impedance.harness.config import load_config
from vdc_impedance.harness.sweep import run_zwidth_sweep, write_sweep

ROOT = Path(__file__).resolve().parents[1]


def main(out="out/demo_zwidth"):
    cfg = load_config(ROOT / "configs" / "planar3_zwidth.toml")
    report = run_zwidth_sweep(cfg)
    write_sweep(report, out)
    for r in report.rows:
        k = "none" if r.max_passive_K_e is None else f"{r.max_passive_K_e:9.0f}{'+' if r.saturated else ' '}"
        print(f"m_d = {r.m_d:4.1f} kg   max passive K_e = {k} N/m   free-motion RMS = {r.rms_free_error:.2e} m")


if __name__ == "__main__":
    main(*sys.argv[1:])
