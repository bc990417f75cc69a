"""Batch front-end: trajectory runs, purity sweeps, the effective-bandwidth
sweep and the linear-system comparison table, all emitted as
self-describing CSV files.

Every output starts with comment lines echoing the fully resolved
configuration and seed; re-running with the same inputs reproduces the
files byte for byte. Worker count comes from the config or the
REALTRAJ_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__, analysis, dpo, tla
from .config import ConfigError, RunConfig
from .trajectory import write_trajectory_csv, write_voltage_matrix


def _header(cfg: RunConfig) -> list[str]:
    return [f"generator = realtraj {__version__}"] + cfg.echo_lines()


def _write_rows(path, rows, header_lines):
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to write")
    names = list(rows[0].keys())
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            cells = []
            for name in names:
                v = row[name]
                cells.append(repr(float(v)) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")


def cmd_trajectory(cfg: RunConfig, out_dir: str) -> list[str]:
    if cfg.scheme == "dpo":
        raise ConfigError("scheme: trajectory runs need a detection scheme, "
                          "not dpo (use dpo-table)")
    stride = 5 if cfg.scheme.startswith("pr") else 0
    traj = analysis.run_scheme_trajectory(
        cfg.scheme, cfg.system, cfg.detector, cfg.duration, cfg.seed,
        dt=cfg.resolved_dt(), sample_interval=cfg.sample_interval,
        dist_stride=stride)
    paths = []
    out = os.path.join(out_dir, f"trajectory_{cfg.scheme}.csv")
    write_trajectory_csv(out, traj, _header(cfg))
    paths.append(out)
    if traj.voltage_dist is not None:
        vout = os.path.join(out_dir, f"voltage_matrix_{cfg.scheme}.csv")
        write_voltage_matrix(vout, traj, _header(cfg))
        paths.append(vout)
    return paths


def cmd_purity_sweep(cfg: RunConfig, out_dir: str) -> list[str]:
    if cfg.scheme == "dpo":
        raise ConfigError("scheme: purity sweeps need a detection scheme")
    res = analysis.purity_vs_omega_sweep(
        cfg.scheme, cfg.sweep.omegas, detector=cfg.detector,
        n_samples=cfg.samples, seed=cfg.seed, transient=cfg.transient,
        dt=cfg.dt, workers=cfg.resolved_workers())
    out = os.path.join(out_dir, f"purity_sweep_{cfg.scheme}.csv")
    _write_rows(out, res.rows(), _header(cfg))
    return [out]


def cmd_effective_bandwidth(cfg: RunConfig, out_dir: str) -> list[str]:
    if not cfg.scheme.startswith("pr"):
        raise ConfigError("scheme: the effective-bandwidth sweep runs "
                          "homodyne x detection (scheme pr-x)")
    res = analysis.effective_bandwidth_sweep(
        cfg.sweep.b_const, cfg.sweep.gammas, omega=cfg.system.omega,
        eta=cfg.detector.eta, n_samples=cfg.samples, seed=cfg.seed,
        transient=cfg.transient, dt=cfg.dt, workers=cfg.resolved_workers())
    rows = []
    for row in res.rows():
        row["noise"] = analysis.noise_for_bandwidth(cfg.sweep.b_const,
                                                    row["gamma"])
        row["b_const"] = cfg.sweep.b_const
        rows.append(row)
    out = os.path.join(out_dir, "effective_bandwidth.csv")
    _write_rows(out, rows, _header(cfg))
    return [out]


def cmd_dpo_table(cfg: RunConfig, out_dir: str) -> list[str]:
    if cfg.scheme != "dpo":
        raise ConfigError("scheme: dpo-table needs scheme = dpo")
    rows = dpo.dpo_table(cfg.sweep.bandwidths, cfg.sweep.chis,
                         eta=cfg.detector.eta, noise=cfg.detector.noise)
    out = os.path.join(out_dir, "dpo_table.csv")
    _write_rows(out, rows, _header(cfg))
    return [out]


def cmd_validate(cfg: RunConfig, _out_dir: str) -> list[str]:
    for line in cfg.validation_report():
        print(line)
    return []


_COMMANDS = {
    "trajectory": cmd_trajectory,
    "purity-sweep": cmd_purity_sweep,
    "effective-bandwidth": cmd_effective_bandwidth,
    "dpo-table": cmd_dpo_table,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="realtraj",
        description="Detector-conditioned trajectories of a driven "
                    "two-level emitter")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True,
                        help="key/value configuration file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out-dir", default=".",
                        help="directory for CSV artifacts")
    parser.add_argument("--samples", type=int, help="override run.samples")
    parser.add_argument("--dt", type=float, help="override run.dt")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_ini(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.samples is not None:
            cfg.samples = args.samples
        if args.dt is not None:
            cfg.dt = args.dt
        cfg._check_ranges()
        os.makedirs(args.out_dir, exist_ok=True)
        paths = _COMMANDS[args.command](cfg, args.out_dir)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ")
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
