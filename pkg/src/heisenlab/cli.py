"""Command line entry point: ``heisenlab {verify,sweep,rate,locality}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_RESOURCE,
    SUITES,
    ConfigError,
    load_config,
    run,
)
from .lattice import LatticeError
from .magnon import KrylovConvergenceError, ResourceLimitError

log = logging.getLogger("heisenlab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heisenlab", description=__doc__)
    sub = parser.add_subparsers(dest="suite", required=True)
    for name in SUITES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--lattice", help="e.g. chain:10:periodic, box2d:3x3:open")
        p.add_argument("--n-up", type=int, dest="n_up")
        p.add_argument("--s0", help="block | random | comma-separated site list")
        p.add_argument("--count", type=int, help="number of random S0 samples")
        p.add_argument("--mu", help="start:stop:step, geom:min:max:points, or a comma list")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--backend", choices=["dense", "krylov"])
        p.add_argument("--dense-ceiling", type=int, dest="dense_ceiling")
        p.add_argument("--krylov-tol", type=float, dest="krylov_tol")
        p.add_argument("--jobs", type=int)
        p.add_argument("--strict", action="store_true", default=None,
                       help="exit 1 when a conjecture check fails")
        if name == "locality":
            p.add_argument("--site", type=int)
            p.add_argument("--radii", help="comma-separated radii (default 0..eccentricity)")
            p.add_argument("--samples", type=int)
        if name == "verify":
            p.add_argument("--perf", action="store_true", default=None,
                           help="also time Krylov evolution on the 16-site chain")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = vars(build_parser().parse_args(argv))
    path = args.pop("config")
    try:
        cfg = load_config(path, **args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        result = run(cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (LatticeError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ResourceLimitError, MemoryError) as exc:
        log.error("resource ceiling exceeded: %s", exc)
        return EXIT_RESOURCE
    except KrylovConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    log.info("%s finished with status %d; outputs in %s", cfg.suite, result.status, cfg.out)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
