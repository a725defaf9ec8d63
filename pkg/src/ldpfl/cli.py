"""Command-line entry point: ``ldpfl {run,sweep-t,audit,solve-ref,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, ConvergenceError, DivergenceError, DomainError, ParseError
from .experiment import (ExperimentConfig, cmd_audit, cmd_run, cmd_solve_ref, cmd_sweep_t,
                         cmd_synth)

log = logging.getLogger("ldpfl")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides 'output')")
    common.add_argument("--seed", type=int, metavar="U64", help="base seed (overrides 'base_seed')")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ldpfl", description="Locally private federated learning simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate repeated runs, write per-round CSVs")
    sub.add_parser("sweep-t", parents=[common], help="final optimality for each T in the config")
    sub.add_parser("audit", parents=[common], help="print the privacy audit of the noise schedule")
    sub.add_parser("solve-ref", parents=[common], help="compute the reference optimum x*")
    sub.add_parser("synth", parents=[common], help="write the configured synthetic dataset")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be a 64-bit unsigned integer")
            cfg.base_seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")

        if args.command == "run":
            paths = cmd_run(cfg, args.out, args.jobs)
            for p in paths:
                log.info("wrote %s", p)
        elif args.command == "sweep-t":
            print(cmd_sweep_t(cfg, args.out, args.jobs))
        elif args.command == "audit":
            json.dump(cmd_audit(cfg), sys.stdout)
            sys.stdout.write("\n")
        elif args.command == "solve-ref":
            print(cmd_solve_ref(cfg, args.out))
        elif args.command == "synth":
            for p in cmd_synth(cfg, args.out):
                print(p)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
