"""Command line entry point ``riesz-she``.

Exit codes: 0 success, 2 config error, 3 tolerance failure, 4 blow-up
budget exceeded.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, DomainError
from .harness import (
    BlowUpBudgetError,
    RunConfig,
    RunResult,
    apply_seed_override,
    emit_plotdata,
    load_config,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_BLOWUP = 0, 2, 3, 4

log = logging.getLogger("riesz_she")


def _report(result):
    for c in result.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  ({c['detail']})")
    print(f"results in {result.out_dir}")
    return EXIT_OK if result.passed else EXIT_TOLERANCE


def _parse_tol_overrides(text):
    """JSON object, path to a JSON file, or comma-separated ``name=value`` pairs."""
    if text is None:
        return None
    if Path(text).is_file():
        text = Path(text).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError:
        try:
            d = {k.strip(): float(v) for k, v in (item.split("=") for item in text.split(","))}
        except ValueError as exc:
            raise ConfigError(f"cannot parse tolerance overrides {text!r}") from exc
    if not isinstance(d, dict):
        raise ConfigError("tolerance overrides must map names to numbers")
    return {k: float(v) for k, v in d.items()}


def cmd_run(args):
    config = load_config(args.config)
    changes = {}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.output is not None:
        changes["output_dir"] = args.output
    config = apply_seed_override(replace(config, **changes))
    config.validate()
    return _report(run_experiment(config))


def cmd_verify_kernels(args):
    config = RunConfig(experiment="kernel-verify", tol_overrides=_parse_tol_overrides(args.tol_overrides), output_dir=args.output)
    return _report(run_experiment(config))


def cmd_emit_plots(args):
    result = RunResult.load(args.result_dir)
    for p in emit_plotdata(result):
        print(p)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="riesz-she", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--workers", type=int)
    r.add_argument("--output", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("verify-kernels", help="check every kernel formula against its oracle")
    k.add_argument("--tol-overrides", help="JSON object, JSON file, or name=value,... pairs")
    k.add_argument("--output", default="results")
    k.set_defaults(func=cmd_verify_kernels)

    e = sub.add_parser("emit-plots", help="rewrite tidy CSV plot data for a result directory")
    e.add_argument("result_dir")
    e.set_defaults(func=cmd_emit_plots)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpBudgetError as exc:
        print(f"blow-up budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
