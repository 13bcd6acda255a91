"""Command-line interface.

Subcommands: ``frame`` (variational constants), ``spectral`` (spectral
density tables), ``noise`` (telegraph trajectories), ``dynamics``
(ensemble-averaged density-matrix evolution), ``sweep`` (transport metrics
on an amplitude x rate grid).  Every run writes RFC-4180-style CSV ('.'
decimal, no locale) plus a ``<out>.manifest.json`` sidecar with the config
snapshot, seed, RNG algorithm and output hashes.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import EvolutionError, evolve, prepare
from .ensemble import (DEFAULT_TU, average_dynamics, resolve_jobs, sweep,
                       transport_efficiency)
from .manifest import RunManifest, write_manifest
from .model import ConfigError, load_config
from .noise import sample_trajectory, trajectory_seed
from .spectral import FrequencyGrid, j_background, j_combined, j_vibrational

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _cell(v) -> str:
    if isinstance(v, (bool, int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _apply_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "geometry", None):
        overrides["geometry"] = args.geometry
    if getattr(args, "omega", None) is not None and not isinstance(args.omega, list):
        overrides["noise_amplitude"] = args.omega
    if getattr(args, "nu", None) is not None and not isinstance(args.nu, list):
        overrides["noise_rate"] = args.nu
    return overrides


def _cmd_frame(args) -> list[Path]:
    config = load_config(args.config, **_apply_overrides(args))
    frame, _ = prepare(config.with_(mode="bath-only"))
    rows = [(i + 1, frame.B[i], frame.R[i], frame.Er[i], frame.theta[i])
            for i in range(frame.n_sites)]
    out = Path(args.out)
    _write_csv(out, ["site", "B", "R", "Er", "theta"], rows)
    outputs = [out]
    if args.dump_profiles:
        prof = out.with_suffix(".profiles.csv")
        header = ["omega"] + [f"F_{i + 1}" for i in range(frame.n_sites)]
        _write_csv(prof, header, np.column_stack([frame.grid.nodes, frame.F.T]))
        outputs.append(prof)
    return outputs


def _cmd_spectral(args) -> list[Path]:
    config = load_config(args.config, **_apply_overrides(args))
    p = config.spectra[args.site - 1]
    grid = FrequencyGrid.default_for(list(config.spectra), n_nodes=args.points)
    w = grid.nodes
    rows = np.column_stack([w, j_background(w, p), j_vibrational(w, p), j_combined(w, p)])
    out = Path(args.out)
    _write_csv(out, ["omega", "J_bg", "J_vib", "J_com"], rows)
    return [out]


def _cmd_noise(args) -> list[Path]:
    config = load_config(args.config, **_apply_overrides(args))
    proc = config.noise
    rows = []
    for i in range(args.n):
        traj = sample_trajectory(proc, args.tmax, trajectory_seed(config.rng_seed, i))
        flips = ";".join(_fmt(t) for t in traj.flip_times)
        rows.append((i, traj.initial_sign, traj.n_flips, flips))
    out = Path(args.out)
    _write_csv(out, ["traj", "initial_sign", "n_flips", "flip_times"], rows)
    return [out]


def _cmd_dynamics(args) -> list[Path]:
    config = load_config(args.config, **_apply_overrides(args))
    if args.n_real is not None:
        config = config.with_(n_realizations=args.n_real)
    stride = max(1, int(round(args.dt_out / config.dt))) if args.dt_out else 1
    avg = average_dynamics(config, jobs=args.jobs, out_stride=stride)
    n = config.network.n_sites
    header = ["t"] + [f"p{i + 1}" for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            header += [f"re_rho_{i + 1}{j + 1}", f"im_rho_{i + 1}{j + 1}"]
    header += ["trace"] + [f"se_p{i + 1}" for i in range(n)]
    pops = avg.populations()
    rows = []
    for k, t in enumerate(avg.times):
        row = [t] + [pops[k, i] for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                row += [avg.rho[k, i, j].real, avg.rho[k, i, j].imag]
        row += [avg.trace()[k]] + list(avg.pop_se[k])
        rows.append(row)
    out = Path(args.out)
    _write_csv(out, header, rows)
    return [out]


def _cmd_sweep(args) -> list[Path]:
    config = load_config(args.config, **_apply_overrides(args))
    omegas = args.omega if args.omega else [config.noise.amplitude]
    nus = args.nu if args.nu else [config.noise.rate]
    grid = sweep(config, omegas, nus, metric=args.metric, jobs=args.jobs,
                 n_realizations=args.n_real, tu=args.tu, t_ss=args.t_ss)
    out = Path(args.out)
    _write_csv(out, ["omega", "nu", "value", "stderr", "n_real", "seed"], grid.rows())
    return [out]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npsim",
        description="Excitation transport in noisy dissipative site networks.",
        epilog="Exit codes: 0 success, 2 usage error, 3 configuration error, "
               "4 numerical failure.")
    parser.add_argument("--version", action="version", version=f"npsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="config file (bundled defaults if omitted)")
        if needs_out:
            p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed override")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: NPSIM_JOBS or CPU count)")
        p.add_argument("--mode", choices=["rtn-only", "bath-only", "bath-rtn"], default=None)
        p.add_argument("--geometry", choices=["chain", "ring"], default=None)

    p = sub.add_parser("frame", help="variational constants per site (B, R, Er)")
    common(p)
    p.add_argument("--dump-profiles", action="store_true",
                   help="also write displacement profiles F_n(omega)")
    p.set_defaults(func=_cmd_frame)

    p = sub.add_parser("spectral", help="spectral density table for one site")
    common(p)
    p.add_argument("--site", type=int, default=1, help="1-based site index")
    p.add_argument("--points", type=int, default=2000)
    p.set_defaults(func=_cmd_spectral)

    p = sub.add_parser("noise", help="dump telegraph-noise trajectories")
    common(p)
    p.add_argument("--omega", type=float, default=None, help="noise amplitude, 1/ps")
    p.add_argument("--nu", type=float, default=None, help="switching parameter, 1/ps")
    p.add_argument("--tmax", type=float, default=5.0)
    p.add_argument("--n", type=int, default=100, help="number of trajectories")
    p.set_defaults(func=_cmd_noise)

    p = sub.add_parser("dynamics", help="ensemble-averaged density-matrix evolution")
    common(p)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--n-real", type=int, default=None, help="override realization count")
    p.add_argument("--dt-out", type=float, default=None, help="output grid spacing, ps")
    p.set_defaults(func=_cmd_dynamics)

    p = sub.add_parser("sweep", help="transport metric on an amplitude x rate grid")
    common(p)
    p.add_argument("--metric", choices=["eta", "ttime", "pss"], default="eta")
    p.add_argument("--omega", type=float, nargs="+", default=None,
                   help="amplitude grid values, 1/ps")
    p.add_argument("--nu", type=float, nargs="+", default=None,
                   help="switching-parameter grid values, 1/ps")
    p.add_argument("--n-real", type=int, default=None)
    p.add_argument("--tu", type=float, default=DEFAULT_TU, help="efficiency horizon, ps")
    p.add_argument("--t-ss", type=float, default=5.0, help="steady-state readout time, ps")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.jobs = resolve_jobs(getattr(args, "jobs", None))
    started = time.time()
    try:
        config = load_config(args.config, **_apply_overrides(args))
        outputs = args.func(args)
    except ConfigError as exc:
        print(f"npsim-error code={EXIT_CONFIG} kind=config msg={str(exc)!r}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvolutionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"npsim-error code={EXIT_NUMERIC} kind=numeric msg={str(exc)!r}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = RunManifest.collect(args.command, config, started, outputs)
    write_manifest(manifest, outputs[0])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
