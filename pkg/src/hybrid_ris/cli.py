"""Command line entry point: ``hybrid-ris {run,identity-check,export-channel,dump-grid}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .dictionary import build_dictionaries
from .geometry import MarkovVRPrior, SystemGeometry, sample_paths, sample_vr, synthesize_channel
from .identities import format_results, run_identity_suite
from .io import export_channel, write_grid_csv

log = logging.getLogger("hybrid_ris")


def _cmd_run(args) -> int:
    if args.spec is None and args.preset is None:
        raise SystemExit("run: give --spec, --preset or both")
    spec = harness.load_spec(args.spec, args.preset, seed=args.seed, trials=args.trials,
                             workers=args.workers)
    if args.paper_scale:
        spec = spec.paper_scale()
    out = Path(args.out or f"results/{spec.name}")
    log.info("running %s: %s over %s, %d trials, estimators %s", spec.name, spec.sweep,
             list(spec.values), spec.trials, ",".join(spec.estimators))

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            log.info("%d/%d trials", done, total)

    table = harness.run_experiment(spec, progress if args.verbose else None,
                                   trace_dir=out / "traces" if args.verbose else None)
    paths = harness.emit(table, out, args.format, timing=args.timing)
    print(f"{'estimator':12s} {spec.sweep:>12s} {'n':>5s} {'NMSE [dB]':>10s}")
    for r in table.aggregate():
        print(f"{r['estimator']:12s} {r['value']:12g} {r['n']:5d} {r['mean_nmse_db']:10.2f}")
    for kind, p in paths.items():
        log.info("wrote %s: %s", kind, p)
    return 0


def _cmd_identity(args) -> int:
    results = run_identity_suite(args.instances, args.seed)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("all identities hold")
    return 0


def _geometry(args) -> SystemGeometry:
    return SystemGeometry(M=args.M, N=args.N, K=args.K)


def _cmd_export(args) -> int:
    geom = _geometry(args)
    rng = np.random.default_rng(args.seed)
    paths = sample_paths(geom, args.L_U, args.L_RB, rng)
    vr = sample_vr(geom, args.L_U, MarkovVRPrior.from_sparsity(args.vr_sparsity), rng)
    for p in export_channel(args.out, synthesize_channel(geom, paths, vr), geom):
        print(p)
    return 0


def _cmd_grid(args) -> int:
    dset = build_dictionaries(_geometry(args), n_angles=args.n_angles, n_rings=args.n_rings)
    print(write_grid_csv(args.out, dset.grid))
    return 0


def _add_geometry(p):
    p.add_argument("--M", type=int, default=8)
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--K", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-ris", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a Monte Carlo experiment")
    p.add_argument("--spec", help="INI file overriding the preset")
    p.add_argument("--preset", choices=harness.PRESETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (default results/<name>)")
    p.add_argument("--format", choices=("csv", "jsonlines"), default="csv")
    p.add_argument("--paper-scale", action="store_true", help="use the full array sizes")
    p.add_argument("--verbose", action="store_true", help="log progress and write module traces")
    p.add_argument("--timing", action="store_true",
                   help="also write per-trial wall times (not reproducible byte for byte)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("identity-check", help="verify the vectorization identities")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_identity)

    p = sub.add_parser("export-channel", help="write one random channel as .bin and .csv")
    _add_geometry(p)
    p.add_argument("--L-U", dest="L_U", type=int, default=3)
    p.add_argument("--L-RB", dest="L_RB", type=int, default=3)
    p.add_argument("--vr-sparsity", type=float, default=0.875)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="file stem")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("dump-grid", help="write the compressed grid as CSV")
    _add_geometry(p)
    p.add_argument("--n-angles", type=int, default=64)
    p.add_argument("--n-rings", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
