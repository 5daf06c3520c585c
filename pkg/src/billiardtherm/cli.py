"""Command-line interface.

Subcommands mirror the experiment stages: `mesh`, `spectrum`, `pressure`,
`boyle` for the single-particle billiard, `assemble2p`, `quench`, `balance`,
`thermo` for the coupled two-box system.  All outputs are CSV files plus one
YAML manifest per run; a config file supplies defaults, flags override it.

Exit codes: 0 success, 2 configuration error, 3 numerical-convergence
failure, 4 stage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import pipeline
from .config import RunConfig
from .errors import ConfigError, ConvergenceError, StageError


def _parse_mode(text: str) -> tuple[int, int]:
    try:
        a, b = (int(p) for p in text.replace("(", "").replace(")", "").split(","))
    except ValueError:
        raise ConfigError(f"mode '{text}' must look like 'nx,ny'")
    if a < 1 or b < 1:
        raise ConfigError("quantum numbers must be positive")
    return a, b


def _add_common(parser):
    parser.add_argument("--config", help="YAML run configuration file")
    parser.add_argument("--out", help="output directory (default from config)")
    parser.add_argument("--cache", help="cache directory override")


def _add_billiard(parser):
    parser.add_argument("--domain", choices=["sinai", "rectangle"])
    parser.add_argument("--grid", type=int, help="mesh resolution N")
    parser.add_argument("--arc", type=int, help="chords along the quarter circle")
    parser.add_argument("--order", type=int, choices=[1, 2])
    parser.add_argument("--levels", type=int)
    parser.add_argument("--tol", type=float)


def _add_twoparticle(parser):
    parser.add_argument("--coupling", type=float)
    parser.add_argument("--pairs", type=int, help="product-basis pair target")
    parser.add_argument("--ecut", type=float, help="explicit pair-energy cutoff")
    parser.add_argument("--quad", type=int, help="quadrature points per axis")
    parser.add_argument("--tmax", type=float)
    parser.add_argument("--tpoints", type=int)
    parser.add_argument("--trust", type=float, help="trusted spectral fraction")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="billiardtherm",
                                description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mesh", help="triangulate a domain and export it")
    _add_common(sp)
    _add_billiard(sp)
    sp.add_argument("--twobox", action="store_true",
                    help="mesh the two-box geometry instead of the billiard")

    sp = sub.add_parser("spectrum", help="lowest billiard eigenvalues")
    _add_common(sp)
    _add_billiard(sp)
    sp.add_argument("--vectors", action="store_true", help="export eigenvectors")
    sp.add_argument("--dump-matrices", action="store_true",
                    help="export stiffness/mass in coordinate format")

    sp = sub.add_parser("pressure", help="level-derivative pressure sweep")
    _add_common(sp)
    _add_billiard(sp)
    sp.add_argument("--lambda", dest="lam", action="append",
                    choices=["lx", "ly", "radius"],
                    help="sweep parameter (repeatable)")
    sp.add_argument("--dlam", type=float)

    sp = sub.add_parser("boyle", help="isotropy and Boyle-Mariotte test")
    _add_common(sp)
    _add_billiard(sp)
    sp.add_argument("--dlam", type=float)
    sp.add_argument("--window", type=int, help="fluctuation smoothing window")

    sp = sub.add_parser("assemble2p", help="build/cache the coupled two-box spectrum")
    _add_common(sp)
    _add_twoparticle(sp)

    sp = sub.add_parser("quench", help="time evolution after switching on the coupling")
    _add_common(sp)
    _add_twoparticle(sp)
    sp.add_argument("--m0", required=True, help="left initial mode, e.g. 2,4")
    sp.add_argument("--n0", required=True, help="right initial mode, e.g. 1,1")

    sp = sub.add_parser("balance", help="per-eigenstate energy balance ratios")
    _add_common(sp)
    _add_twoparticle(sp)
    sp.add_argument("--m0", required=True)
    sp.add_argument("--n0", required=True)
    sp.add_argument("--count", type=int, help="number of eigenstates")

    sp = sub.add_parser("thermo", help="entropy sampling and temperature offsets")
    _add_common(sp)
    _add_twoparticle(sp)
    sp.add_argument("--initial-set", help="file of 'm0x m0y n0x n0y' rows")
    sp.add_argument("--max-samples", type=int)
    sp.add_argument("--thermo-pairs", type=int, help="basis size for sampling")
    return p


def apply_overrides(config: RunConfig, args) -> RunConfig:
    g, m, e, tp, th = (config.geometry, config.mesh, config.eigen,
                       config.twoparticle, config.thermo)
    if getattr(args, "domain", None):
        g.kind = args.domain
    if getattr(args, "grid", None):
        m.resolution = args.grid
    if getattr(args, "arc", None):
        m.arc_points = args.arc
    if getattr(args, "order", None):
        m.order = args.order
    if getattr(args, "levels", None):
        e.levels = args.levels
    if getattr(args, "tol", None):
        e.tol = args.tol
    if getattr(args, "dlam", None):
        config.pressure.dlam = args.dlam
    if getattr(args, "window", None):
        config.pressure.smoothing_window = args.window
    if getattr(args, "lam", None):
        config.pressure.params = tuple(args.lam)
    if getattr(args, "coupling", None) is not None:
        tp.coupling = args.coupling
    if getattr(args, "pairs", None):
        tp.pair_target = args.pairs
    if getattr(args, "ecut", None):
        tp.e_cut = args.ecut
    if getattr(args, "quad", None):
        tp.quad_points = args.quad
    if getattr(args, "tmax", None):
        tp.time_max = args.tmax
    if getattr(args, "tpoints", None):
        tp.time_points = args.tpoints
    if getattr(args, "trust", None):
        tp.trust_fraction = args.trust
    if getattr(args, "count", None):
        tp.balance_count = args.count
    if getattr(args, "max_samples", None):
        th.max_samples = args.max_samples
    if getattr(args, "thermo_pairs", None):
        th.pair_target = args.thermo_pairs
    if getattr(args, "out", None):
        config.output.directory = args.out
    if getattr(args, "cache", None):
        config.output.cache_directory = args.cache
    if getattr(args, "vectors", False):
        config.output.write_vectors = True
    return config


def _dispatch(args) -> None:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config = apply_overrides(config, args)
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(out / ".billiardtherm.lock")
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StageError("lock", RuntimeError(
            f"another run is active in {out} (lock file present)"))
    try:
        if args.command == "mesh":
            if getattr(args, "twobox", False):
                config.geometry.kind = "twobox"
            manifest = pipeline.run_mesh(config)
        elif args.command == "spectrum":
            manifest = pipeline.run_spectrum(config, dump_matrices=args.dump_matrices)
        elif args.command == "pressure":
            manifest = pipeline.run_pressure(config)
        elif args.command == "boyle":
            manifest = pipeline.run_boyle(config)
        elif args.command == "assemble2p":
            manifest = pipeline.run_assemble2p(config)
        elif args.command == "quench":
            manifest = pipeline.run_quench(config, _parse_mode(args.m0),
                                           _parse_mode(args.n0))
        elif args.command == "balance":
            manifest = pipeline.run_balance(config, _parse_mode(args.m0),
                                            _parse_mode(args.n0))
        elif args.command == "thermo":
            manifest = pipeline.run_thermo(config, args.initial_set)
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")
    finally:
        lock.release()
    for line in manifest.warnings:
        print(line)
    print(f"wrote {', '.join(manifest.outputs)} and {manifest.filename} in {out}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        if isinstance(exc.original, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc.original, ConvergenceError):
            print(f"convergence failure: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
