"""Planar arm approaching a 1000 N/m wall: telemetry CSV plus a summary."""

import json
import sys
from pathlib import Path

from vdc_impedance.harness.config import load_config
from vdc_impedance.harness.io import write_json, write_telemetry
from vdc_impedance.harness.simulate import simulate

ROOT = Path(__file__).resolve().parents[1]


def main(out="out/demo_contact"):
    cfg = load_config(ROOT / "configs" / "planar3_contact.toml")
    result = simulate(cfg)
    write_telemetry(Path(out) / "telemetry.csv", result.series)
    summary = result.summary()
    write_json(Path(out) / "summary.json", summary)
    keys = ("first_contact_time", "bounces", "E_net", "max_upsilon_after_transient",
            "max_upsilon_sustained_contact", "min_L_hat_eigenvalue", "spd_fallbacks", "min_S_integral")
    print(json.dumps({k: summary[k] for k in keys}, indent=2))


if __name__ == "__main__":
    main(*sys.argv[1:])
