"""Command line entry point: ``hexscatter <kind> [flags]``, ``run``, ``regress``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checks import CHECKS
from .config import KINDS, ConfigError, apply_overrides, read_config_data, validate
from .harness import FIXTURES, output_dir, regress, run
from .mourre import LevelSpacingError
from .propagators import EnclosureError
from .scattering import BoundaryContaminationError, WindowMismatchError

EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 1, 2, 3
ABORTS = (BoundaryContaminationError, EnclosureError, WindowMismatchError, LevelSpacingError)

# flag -> dotted config path
FLAGS = {
    "N": "N", "L": "L", "boundary": "boundary", "gap": "gap", "seed": "seed",
    "rho": "potential.rho", "c_long": "potential.c_long", "c_short": "potential.c_short",
    "n_times": "times.n_times", "t0": "times.t0",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                   help="override any config field, e.g. --set window.a=1.3")
    p.add_argument("--out", type=Path, help="output directory (default: $HEXSCATTER_OUTPUT/<kind>-<hash>)")
    p.add_argument("--window", nargs=2, type=float, metavar=("A", "B"))
    p.add_argument("--modifier", action="store_true", default=None)
    p.add_argument("--only", action="append", metavar="CHECK", help="run only the named checks")
    p.add_argument("--boundary", choices=["zero-padded", "periodic"])
    for flag in ("N", "L", "seed", "n_times"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
    for flag in ("gap", "rho", "c_long", "c_short", "t0"):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hexscatter", description=__doc__)
    ap.add_argument("--list-checks", action="store_true", help="print every check and its experiment kind")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")
    for kind in KINDS:
        _common(sub.add_parser(kind, help=f"run a {kind} experiment"))
    _common(sub.add_parser("run", help="run the experiment named by the config's kind"))
    rg = sub.add_parser("regress", help="rerun golden fixtures and report drift")
    rg.add_argument("--fixtures", type=Path, default=FIXTURES)
    rg.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE")
    return ap


def config_from_args(args: argparse.Namespace):
    data = read_config_data(args.config) if args.config else {}
    if args.command != "run":
        data["kind"] = args.command
    flags = []
    for name, path in FLAGS.items():
        v = getattr(args, name, None)
        if v is not None:
            flags.append(f"{path}={json.dumps(v)}")
    if args.window:
        flags += [f"window.a={args.window[0]}", f"window.b={args.window[1]}"]
    if args.modifier:
        flags.append("modifier=true")
    if args.only:
        flags.append(f"only={json.dumps(args.only)}")
    return validate(apply_overrides(data, flags + args.overrides))


def list_checks() -> str:
    width = max(map(len, CHECKS))
    return "\n".join(f"{name:<{width}}  {kind:<13}  {desc}" for name, (kind, desc) in CHECKS.items())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.list_checks:
        print(list_checks())
        return 0
    if args.command is None:
        build_parser().print_usage(sys.stderr)
        return EXIT_CONFIG

    if args.command == "regress":
        try:
            overrides = apply_overrides({}, args.overrides)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        summary = regress(args.fixtures, overrides)
        print(summary.to_json())
        return 0 if summary.passed else EXIT_FAIL

    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or output_dir(cfg)
    try:
        report = run(cfg, out)
    except ABORTS as exc:
        print(f"aborted ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ABORT
    for c in report.checks:
        value = "" if c.value is None else f"  {c.value:.6g}"
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}{value}")
    print(f"{'PASS' if report.passed else 'FAIL'}  {cfg.kind}  ({report.wall_clock:.1f} s)  -> {out}")
    return 0 if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
