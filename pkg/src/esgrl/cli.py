"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (config, spec, data), 2 runtime failure.
Set ``ESGRL_LOG`` to a level name (DEBUG, INFO, WARNING, ...) for more or less output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import harness
from .analytics import compute_metrics, read_returns_csv
from .config import ConfigError, describe, load_config, parse_synth
from .marketdata import DataError, synth_market, write_esg_csv, write_ohlcv_csv

logger = logging.getLogger("esgrl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class InvalidInput(Exception):
    pass


def setup_logging() -> None:
    level = os.environ.get("ESGRL_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else logging.getLevelName(level)
    if not isinstance(value, int):
        value = logging.WARNING
    logging.basicConfig(level=value, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(path):
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise InvalidInput(f"config not found: {exc.filename}") from None
    except ConfigError as exc:
        raise InvalidInput(str(exc)) from None


def cmd_validate(args) -> int:
    cfg = _config(args.config)
    print(describe(cfg))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out or cfg.output)
    try:
        records, table = harness.run_experiment(cfg, out, args.parallel)
    except DataError as exc:
        raise InvalidInput(str(exc)) from None
    failed = [r for r in records if not r.ok]
    agents = [r for r in records if not r.cell.startswith("baseline/")]
    print(harness.format_table(table), end="")
    print(f"output: {out}")
    if failed:
        logger.warning("%d of %d runs failed; see %s", len(failed), len(records), out / "manifest.json")
    # partial failures are recorded, not fatal; no trained agent at all is
    return EXIT_RUNTIME if agents and not any(r.ok for r in agents) else EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "manifest.json").exists():
        raise InvalidInput(f"{run_dir}: no manifest.json, not a run directory")
    table = harness.report(run_dir)
    print(harness.format_table(table), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        raw = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInput(f"spec not found: {args.spec}") from None
    except yaml.YAMLError as exc:
        raise InvalidInput(f"{args.spec}: {exc}") from None
    if isinstance(raw, dict) and "synth" in raw:
        raw = raw["synth"]
    errors: list[str] = []
    spec, days, seed = parse_synth(raw, "synth", errors)
    if errors:
        raise InvalidInput(str(ConfigError(errors)))
    try:
        ds = synth_market(spec, days, seed)
    except DataError as exc:
        raise InvalidInput(str(exc)) from None
    out = Path(args.out)
    esg_out = Path(args.esg) if args.esg else out.with_name(out.stem + "_esg.csv")
    write_ohlcv_csv(ds, out)
    write_esg_csv(ds, esg_out)
    print(json.dumps({"ohlcv": str(out), "esg": str(esg_out), "days": len(ds),
                      "tickers": list(ds.tickers), "fingerprint": ds.fingerprint()}, indent=2))
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        returns = read_returns_csv(args.returns)
        report = compute_metrics(returns)
    except FileNotFoundError:
        raise InvalidInput(f"file not found: {args.returns}") from None
    except (ValueError, IndexError) as exc:
        raise InvalidInput(f"{args.returns}: {exc}") from None
    print(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esgrl", description="ESG-regulated portfolio RL experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a config file and list the runs it defines")
    s.add_argument("config")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("run", help="train and evaluate every cell and seed, then write the report")
    s.add_argument("config")
    s.add_argument("--parallel", type=int, default=None, metavar="N")
    s.add_argument("--out", default=None, metavar="DIR")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("report", help="rebuild summary tables and figures from a run directory")
    s.add_argument("run_dir")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("synth", help="generate a synthetic market as OHLCV + ESG CSV files")
    s.add_argument("spec")
    s.add_argument("--out", required=True, metavar="CSV")
    s.add_argument("--esg", default=None, metavar="CSV", help="ESG output (default: <out>_esg.csv)")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("metrics", help="risk/performance metrics of a daily return series")
    s.add_argument("returns")
    s.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.command == "run" and args.parallel is not None and args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.fn(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
