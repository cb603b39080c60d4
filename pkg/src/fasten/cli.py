"""Command line: ``fasten run``, ``fasten report``, ``fasten verify``.

Exit codes: 0 success, 1 failed acceptance criteria or empty report,
2 invalid config or arguments, 3 numeric abort during a run.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, parse_seed_list
from .runner import EXIT_CONFIG, EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fasten", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="train every (sweep value, seed) of a config")
    r.add_argument("--config", required=True, metavar="PATH", help="TOML or JSON experiment config")
    r.add_argument("--seed-override", metavar="LIST", help="seeds to use instead of the config's, e.g. 0,1,2 or 0-4")
    r.add_argument("--strict", action="store_true", help="single-threaded, sequential, bitwise reproducible")
    r.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    r.add_argument("--out", metavar="DIR", help="result root (overrides the config's 'out')")

    rep = sub.add_parser("report", help="consolidate the summaries under a result directory")
    rep.add_argument("result_dir", metavar="DIR")

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--only", metavar="LIST", help="criterion numbers, e.g. 1,2,11")
    v.add_argument("--json", metavar="PATH", help="also write the results as JSON")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "run":
        return _run(args)
    if args.verb == "report":
        return _report(args)
    return _verify(args)


def _run(args) -> int:
    from . import runner
    try:
        config = load_config(args.config)
        seeds = parse_seed_list(args.seed_override) if args.seed_override else None
        runner.worker_count(args.strict, 1)  # validates FASTEN_THREADS up front
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, _ = runner.run(config, out=args.out, strict=args.strict, seeds=seeds, dry_run=args.dry_run)
    return code


def _report(args) -> int:
    from . import runner
    try:
        code, _, _ = runner.report(args.result_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


def _verify(args) -> int:
    from . import acceptance
    try:
        numbers = sorted({int(x) for x in args.only.split(",")}) if args.only else None
    except ValueError:
        print(f"error: bad criterion list {args.only!r}", file=sys.stderr)
        return EXIT_CONFIG
    if numbers and not all(1 <= n <= 12 for n in numbers):
        print("error: criteria are numbered 1-12", file=sys.stderr)
        return EXIT_CONFIG
    results = acceptance.run_all(numbers=numbers, log=lambda m: print(m, flush=True))
    passed = sum(c.passed for c in results)
    print(f"{passed}/{len(results)} criteria passed")
    if args.json:
        Path(args.json).write_text(json.dumps(
            [{"number": c.number, "title": c.title, "passed": c.passed, "detail": c.detail,
              "seconds": c.seconds} for c in results], indent=2) + "\n")
    return EXIT_OK if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
