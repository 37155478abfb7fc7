"""Command-line entry point.

    rdm-lab run <cfg>                full pipeline, reports into the output dir
    rdm-lab sweep <cfg> --axis A     one aggregated CSV over lambda|delta|epsilon|env_size
    rdm-lab verify <cfg>             exact-identity suite only

RDM_LAB_THREADS caps BLAS parallelism (set before numpy loads).
"""

from __future__ import annotations

import argparse
import os
import sys


def _cap_threads():
    threads = os.environ.get("RDM_LAB_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = threads


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdm-lab",
        description="Shell-ensemble reduced-density-matrix laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--cache-dir", help="eigendecomposition cache directory")

    run_p = sub.add_parser("run", help="full pipeline")
    common(run_p)

    sweep_p = sub.add_parser("sweep", help="one-axis aggregated sweep")
    common(sweep_p)
    sweep_p.add_argument(
        "--axis",
        required=True,
        choices=("lambda", "delta", "epsilon", "env_size"),
    )

    verify_p = sub.add_parser("verify", help="exact-identity checks only")
    common(verify_p)
    return parser


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)

    from .config import load_config
    from .errors import ConfigError, IdentityViolation
    from .pipeline import run_pipeline, run_sweep, run_verify
    from .spectral import SpectralCache

    try:
        config = load_config(args.config)
        cache = SpectralCache(args.cache_dir) if args.cache_dir else None
        if args.command == "run":
            code = run_pipeline(config, out_dir=args.out, cache=cache)
        elif args.command == "sweep":
            code = run_sweep(config, args.axis, out_dir=args.out, cache=cache)
        else:
            code = run_verify(config, out_dir=args.out, cache=cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except IdentityViolation as exc:
        print(f"exact identity violated: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    raise SystemExit(main())
