"""Command line entry point.

    subgeo run <config.json> [--out DIR] [--jobs N] [--frozen-clock] [--embed-matrices]
    subgeo fit <records.csv>
    subgeo validate <config.json>

Exit codes: 0 success, 1 IO error, 2 invalid config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

from . import analysis, experiments, report
from .errors import ConfigError, NumericalError, PreconditionError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subgeo", description="Subspace geometry of adapter forgetting.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write a report")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output_dir in the config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--frozen-clock", action="store_true",
                     help="write fixed timestamps so reports are byte-reproducible")
    run.add_argument("--embed-matrices", action="store_true",
                     help="embed task bases, targets and W0 in report.json")
    run.add_argument("--no-png", action="store_true", help="skip raster figures")
    run.add_argument("--dump-gradients", action="store_true",
                     help="also write gradient-sample matrices as CSV")

    fit = sub.add_parser("fit", help="fit the forgetting law to a records.csv")
    fit.add_argument("records")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    return p


def _err(msg: str) -> None:
    print(f"subgeo: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = experiments.load_config(args.config)
    if args.embed_matrices:
        cfg = dataclasses.replace(cfg, embed_matrices=True)
    if args.jobs < 1:
        raise ConfigError("must be >= 1", "--jobs")
    out = args.out or cfg.output_dir
    rep = report.run_experiment(cfg, out, jobs=args.jobs, frozen_clock=args.frozen_clock,
                                png=not args.no_png, dump_samples=args.dump_gradients)
    print(f"wrote {rep['n_records']} records to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    rows = report.read_csv(args.records)
    points = [(r["interference"], r["forgetting_immediate"]) for r in rows
              if math.isfinite(r["interference"]) and math.isfinite(r["forgetting_immediate"])]
    try:
        fit = analysis.fit_forgetting_law(points)
    except PreconditionError as exc:
        raise NumericalError(f"cannot fit: {exc}") from exc
    sign = (fit.pearson_r > 0) - (fit.pearson_r < 0)
    out = {"fit": fit.to_dict(), "n_rows": len(rows), "correlation_sign": sign}
    print(json.dumps(report.jsonable(out), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = experiments.load_config(args.config)
    n = len(experiments.expand_runs(cfg))
    print(f"ok: {cfg.kind}, {n} runs")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": cmd_run, "fit": cmd_fit, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except PreconditionError as exc:
        code = EXIT_IO if args.command == "fit" else EXIT_NUMERIC
        _err(str(exc))
        return code
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
