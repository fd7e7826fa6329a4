"""Wall-contact step on the ideal plant for several contact-channel inertias."""

from pathlib import Path

from vdc_impedance.harness.analysis import effort_proxy, step_metrics
from vdc_impedance.harness.config import load_config
from vdc_impedance.harness.simulate import Variant, simulate

ROOT = Path(__file__).resolve().parents[1]


def main(inertias=(2.0, 5.0, 10.0)):
    cfg = load_config(ROOT / "configs" / "ideal_wall_step.toml")
    result = simulate(cfg, [Variant(m_d=m) for m in inertias])
    print(f"{'m_d':>5} {'settling [s]':>13} {'overshoot':>10} {'effort [N]':>11}")
    for i, m in enumerate(inertias):
        sm = step_metrics(result.trace("t", i), result.trace("X", i)[:, 2])
        eff = effort_proxy(result.trace("Xr_ddot", i), result.sim.tuning.M_d[i])
        print(f"{m:5.1f} {sm.settling_time:13.3f} {sm.overshoot:10.4f} {eff:11.4f}")


if __name__ == "__main__":
    main()
