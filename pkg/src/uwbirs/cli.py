"""Command-line entry point: run, validate, and sweep scenario files."""

from __future__ import annotations

import argparse
import sys

from .harness import (EXIT_IO, EXIT_OK, EXIT_SCHEMA, CACHE_ENV_VAR,
                      ScenarioError, run_scenario, validate_scenario)


def _band_range(text: str) -> list[float]:
    """Parse 'start:stop:step' into an inclusive list of relative bandwidths."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            "expected START:STOP:STEP, e.g. 0.1:0.4:0.05") from exc
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("need step > 0 and stop >= start")
    values = []
    b = start
    while b <= stop + 1e-12:
        values.append(round(b, 9))
        b += step
    return values


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("scenario", help="scenario file path or bundled name")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--decimation", type=int, default=None,
                     help="override grid decimation")
    sub.add_argument("--threads", type=int, default=1,
                     help="parallel workers across bandwidths")
    sub.add_argument("--precision", choices=("f32", "f64"), default="f64",
                     help="incident-field storage precision")
    sub.add_argument("--save-phases", action="store_true",
                     help="also export per-technique phase maps as CSV")
    sub.add_argument("--cache-dir", default=None,
                     help=f"field cache directory (default ${CACHE_ENV_VAR})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwbirs",
        description="Wideband reflecting-surface downlink scenario runner")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run a scenario and write CSV artifacts")
    _add_run_options(run)

    validate = subs.add_parser("validate", help="check a scenario without running")
    validate.add_argument("scenario", help="scenario file path or bundled name")

    sweep = subs.add_parser("sweep",
                            help="run as a metrics-vs-bandwidth sweep")
    _add_run_options(sweep)
    sweep.add_argument("--bands", type=_band_range, required=True,
                       metavar="START:STOP:STEP",
                       help="relative bandwidths, e.g. 0.1:0.4:0.05")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "validate":
        diags = validate_scenario(args.scenario)
        for diag in diags:
            print(f"error: {diag}", file=sys.stderr)
        if not diags:
            print("scenario is valid")
        return EXIT_SCHEMA if diags else EXIT_OK

    overrides = None
    if args.command == "sweep":
        overrides = args.bands
    try:
        result = run_scenario(
            args.scenario, out_dir=args.out, decimation=args.decimation,
            threads=args.threads, precision=args.precision,
            save_phases=args.save_phases, cache_dir=args.cache_dir,
            bands_override=overrides)
    except ScenarioError as exc:
        for diag in exc.diagnostics:
            print(f"error: {diag}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    for path in result.artifacts:
        print(path)
    if result.exit_code != EXIT_OK:
        print("warning: some solvers did not converge; outputs are partial",
              file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
