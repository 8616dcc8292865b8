"""Command line: ``kinhom run <config> | list | verify <report> <golden>``."""

from __future__ import annotations

import argparse
import sys

from kinhom.errors import ConfigError, NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinhom", description="Periodic homogenization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by an INI config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1, help="processes for ladder entries")
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--preset", choices=("desk", "full"), default=None)
    sub.add_parser("list", help="list the scenario catalog")
    v = sub.add_parser("verify", help="compare a report CSV against a golden CSV")
    v.add_argument("report")
    v.add_argument("golden")
    v.add_argument("--rtol", type=float, default=1e-9)
    return p


def _run(args) -> int:
    from kinhom.harness.config import load_config
    from kinhom.harness.runner import run

    try:
        cfg = load_config(args.config, args.preset)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1", "--jobs")
    res = run(cfg, out=args.out, jobs=args.jobs)
    for series, rep in sorted(res.reports.items()):
        print(f"{series}: extrapolated {rep.extrapolated:.10g}  "
              f"(reference {rep.rows[-1].reference:.10g})")
    for f in res.files:
        print(f"wrote {f}")
    print(f"wrote {res.manifest}")
    return EXIT_OK


def _verify(args) -> int:
    from kinhom.harness.runner import verify

    problems = verify(args.report, args.golden, rtol=args.rtol)
    for msg in problems:
        print(msg)
    if problems:
        return EXIT_NUMERICAL
    print("match")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            from kinhom.harness.scenarios import list_scenarios

            for name, topic in list_scenarios():
                print(f"{name:15s} {topic}")
            return EXIT_OK
        if args.command == "verify":
            return _verify(args)
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        where = getattr(exc, "scenario", None)
        prefix = f"scenario {where!r}: " if where else ""
        print(f"numerical failure: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
