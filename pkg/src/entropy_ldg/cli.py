"""Command-line entry point: custom runs, experiment presets and model validation."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import InvalidArgument, NotConvergedError, NumericDomainError, TimeStepUnderflow
from .experiments import PRESETS, run_config, run_experiment
from .models import validate_model


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_config(cfg, args.out)
    print(result.summary())
    for f in result.files:
        print(f"wrote {f}")
    return 0 if result.ok else 1


def _cmd_experiment(args) -> int:
    result = run_experiment(args.preset, args.out)
    print(result.summary())
    for f in result.files:
        print(f"wrote {f}")
    return 0 if result.ok else 1


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    report = validate_model(cfg.build_model(), samples=args.samples, seed=args.seed)
    print(report.to_text())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropy-ldg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a simulation described by an INI configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("experiment", help="run a built-in experiment preset")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("validate-model", help="sample-check the entropy structure of the configured model")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, NumericDomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NotConvergedError, TimeStepUnderflow) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
