"""Command line entry point.

Usage
-----

    pamvalley SUBCOMMAND --config exp.ini [--seed U64] [--workers N] [--out DIR]
                         [--set section.key=value ...] [--sweep param=v1,v2,...]

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 aborted run.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

from .config import KINDS, WORKERS_ENV, ValidationError, apply_overrides, build, read_raw
from .runner import RunAborted, run, sweep

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_ABORTED = 0, 1, 2, 3
log = logging.getLogger("pamvalley")


def get_parser():
    p = argparse.ArgumentParser(
        prog="pamvalley",
        description="Parabolic Anderson model: simulation, valley sets and tail statistics",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI or JSON experiment config")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides config)")
    common.add_argument("--workers", type=int, metavar="N",
                        help=f"worker processes (default: ${WORKERS_ENV} or config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("--sweep", metavar="PARAM=V1,V2,...",
                        help="run one sub-run per value and aggregate")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=f"run a {kind} experiment")
    sub.add_parser("validate", parents=[common], help="check a config and report problems")
    return p


def _load(opts, kind):
    raw = read_raw(opts.config) if opts.config else {}
    raw = apply_overrides(raw, opts.overrides)
    workers = opts.workers
    if workers is None and os.environ.get(WORKERS_ENV):
        workers = int(os.environ[WORKERS_ENV])
    return build(raw, kind=kind, seed=opts.seed, workers=workers, out=opts.out)


def main(argv=None):
    opts = get_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if opts.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    kind = None if opts.command == "validate" else opts.command
    try:
        cfg, errors, warns = _load(opts, kind)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if opts.command == "validate":
        print(json.dumps({"valid": True, "kind": cfg.kind, "config_hash": cfg.hash(),
                          "warnings": warns}, indent=2))
        return EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # already reported above
            if opts.sweep:
                name, _, vals = opts.sweep.partition("=")
                values = [float(v) for v in vals.split(",") if v.strip()]
                rows = sweep(cfg, name, values)
                print(json.dumps({"sweep": name, "runs": len(rows), "out": cfg.out}))
            else:
                man = run(cfg)
                print(json.dumps({"kind": man.kind, "config_hash": man.config_hash,
                                  "out": cfg.out, "summary": man.summary}, default=str))
    except ValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        print("aborted", file=sys.stderr)
        return EXIT_ABORTED
    except RunAborted as exc:
        # the run started and left its incomplete marker behind
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except Exception as exc:  # noqa: BLE001 - report, do not trace
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
