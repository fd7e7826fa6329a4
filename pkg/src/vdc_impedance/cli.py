"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 a run diverged,
3 a post-run check failed.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .allocator import derive_gains, gain_residuals
from .harness.config import ConfigError, ExperimentConfig, load_config
from .harness.io import write_json, write_telemetry
from .harness.simulate import simulate
from .harness.sweep import run_zwidth_sweep, write_sweep

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3
IDENTITY_TOL = 1e-10


def _out_dir(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    return Path(override) if override else Path(cfg.output_dir)


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    result = simulate(cfg)
    out = _out_dir(cfg, args.out)
    write_telemetry(out / "telemetry.csv", result.series)
    summary = result.summary()
    write_json(out / "summary.json", summary)
    print(f"wrote {out / 'telemetry.csv'} and {out / 'summary.json'}")
    if summary["diverged"]:
        print(f"run diverged at step {summary['diverged_step']}: {summary['divergence_reason']}")
        return EXIT_DIVERGED
    if summary["min_S_integral"] < -cfg.gamma0:
        print(f"stability bound violated: min integral of S = {summary['min_S_integral']:.3g} J")
        return EXIT_CHECK
    return EXIT_OK


def cmd_zwidth(cfg: ExperimentConfig, args) -> int:
    report = run_zwidth_sweep(cfg)
    out = write_sweep(report, _out_dir(cfg, args.out))
    print(f"{'m_d':>6} {'max passive K_e':>16} {'free RMS error':>15}")
    for r in report.rows:
        k = "none" if r.max_passive_K_e is None else f"{r.max_passive_K_e:.1f}" + ("+" if r.saturated else "")
        print(f"{r.m_d:6.2f} {k:>16} {r.rms_free_error:15.3e}")
    print(f"report written to {out}")
    ks = [(-np.inf if k is None else k) for k in report.max_passive()]
    if any(b < a for a, b in zip(ks, ks[1:])):
        print("maximum passive stiffness is not non-decreasing in m_d")
        return EXIT_CHECK
    return EXIT_OK


def cmd_gains(cfg: ExperimentConfig, args) -> int:
    gains = derive_gains(cfg.spec)
    np.set_printoptions(precision=6, suppress=True, linewidth=120)
    for name in ("Gamma_p", "Gamma_v", "Gamma_f"):
        print(f"{name} (diagonal): {np.diag(getattr(gains, name))}")
    worst = max(float(np.abs(r).max()) for r in gain_residuals(cfg.spec, gains))
    print(f"largest identity residual: {worst:.3e}")
    return EXIT_OK if worst < IDENTITY_TOL else EXIT_CHECK


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    problems: List[str] = []
    try:
        derive_gains(cfg.spec)
    except ValueError as exc:
        problems.append(str(exc))
    if cfg.plant == "chain":
        m = cfg.model
        outside = (cfg.q0 < m.lower) | (cfg.q0 > m.upper)
        if outside.any():
            problems.append("initial joint positions outside limits: "
                            + ", ".join(m.joints[i].name for i in np.flatnonzero(outside)))
        if not all(b.is_consistent() for b in m.bodies):
            problems.append("a body has physically inconsistent inertial parameters")
    if cfg.wall is not None and cfg.wall.axis != cfg.sweep.channel:
        problems.append("zwidth channel differs from the wall axis")
    for p in problems:
        print(f"problem: {p}")
    if problems:
        return EXIT_CONFIG
    print(f"{cfg.source or 'config'}: ok ({cfg.plant} plant, {cfg.n_steps} steps)")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "zwidth": cmd_zwidth, "gains": cmd_gains, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdc-impedance", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run one closed-loop simulation"),
                            ("zwidth", "sweep wall stiffness over contact inertias"),
                            ("gains", "print the derived allocator gains and check their identities"),
                            ("validate", "static checks of a configuration")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment TOML file")
        if name in ("simulate", "zwidth"):
            p.add_argument("--out", help="output directory (default: run.output_dir)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
