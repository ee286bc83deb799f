"""Command-line entry point: ``phonon-arith --config run.yaml --seed 3 --outdir runs``.

Exit status: 0 on success, 2 for configuration errors, 3 when post-selection
fails, 4 for integration or truncation failures, 1 for any other package error.
"""
import argparse
import logging
import sys

from .config import EXPERIMENTS, ExperimentConfig, parse_config, with_overrides
from .exceptions import (
    ConfigError,
    IntegrationError,
    PhononArithError,
    PostSelectionError,
    TruncationError,
)
from .experiments import run

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_POSTSELECTION, EXIT_INTEGRATION = 0, 1, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="phonon-arith", description="Run one phonon addition/subtraction experiment.")
    p.add_argument("--config", help="YAML configuration file (omit for all defaults)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--outdir", default="runs", help="root directory for run artifacts (default: runs)")
    p.add_argument("--exact", action="store_true", default=None,
                   help="noiseless pulses and exact (unsampled) data")
    p.add_argument("--shots", type=int, help="shots per scan point or tomography setting")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="experiment to run (overrides the config)")
    p.add_argument("--label", help="output sub-directory name (default: config hash prefix)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = parse_config(args.config) if args.config else ExperimentConfig()
        if args.shots is not None and args.shots <= 0:
            raise ConfigError("--shots must be positive")
        config = with_overrides(config, seed=args.seed, exact=args.exact, shots=args.shots,
                                experiment=args.experiment, label=args.label)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(config, args.outdir)
    except PostSelectionError as exc:
        print(f"{config.experiment}: post-selection failed: {exc}", file=sys.stderr)
        return EXIT_POSTSELECTION
    except (IntegrationError, TruncationError) as exc:
        print(f"{config.experiment}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except PhononArithError as exc:
        print(f"{config.experiment}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(report.to_text())
    print(f"artifacts written to {report.directory}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
