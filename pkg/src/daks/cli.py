"""Command line entry point: ``daks run | check | calibrate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from daks.adversary import AdversaryError
from daks.experiment import (
    CheckError,
    calibrate,
    check,
    load_document,
    load_sweep,
    run_sweep,
    summary_table,
    validate_inputs,
    write_results,
)
from daks.simulator import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def cmd_run(args) -> int:
    try:
        spec = load_sweep(args.config, seeds=args.seeds, max_rounds=args.max_rounds)
        configs = spec.configs()
        validate_inputs(configs)
    except (ConfigError, AdversaryError, FileNotFoundError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out_dir or spec.out_dir or f"results/{spec.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    keep = spec.traces and not args.no_traces
    started = datetime.now(timezone.utc).isoformat()
    records = run_sweep(configs, serial=args.serial, keep_traces=keep)
    write_results(records, out_dir, traces=keep)
    truncated = sum(r.metrics.truncated for r in records)
    with open(out_dir / "run.log", "a") as fh:
        fh.write(json.dumps({"started": started, "finished": datetime.now(timezone.utc).isoformat(),
                             "config": str(args.config), "runs": len(records), "truncated": truncated}) + "\n")
    print(summary_table(records))
    print(f"wrote {len(records)} runs to {out_dir / 'runs.csv'}")
    if truncated:
        print(f"{truncated} run(s) hit the round cap", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        results = check(args.results, args.criteria)
    except (CheckError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_calibrate(args) -> int:
    try:
        doc = load_document(args.config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = calibrate(doc, out_dir=args.out_dir, serial=args.serial)
    for row in out["table"]:
        print("  ".join(f"{k}={v}" for k, v in row.items()))
    if out["recommended"] is None:
        print("no (H, K) pair in the grid meets the correctness criterion")
        return EXIT_FAIL
    H, K = out["recommended"]
    print(f"recommended H={H:g} K={K:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daks", description="Seeded sweeps of the gossip-based task computing protocol.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded sweep and write CSV/JSONL results")
    p.add_argument("--config", required=True, help="TOML/JSON sweep file or shipped config name")
    p.add_argument("--out-dir")
    p.add_argument("--seeds", type=int, help="seeds per cell (overrides the config)")
    p.add_argument("--serial", action="store_true", help="run trials sequentially")
    p.add_argument("--max-rounds", type=int, help="round cap per run (default 64 * n * chunk size)")
    p.add_argument("--no-traces", action="store_true", help="skip traces.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="evaluate acceptance criteria on sweep results")
    p.add_argument("--results", required=True, help="runs.csv or the directory holding it")
    p.add_argument("--criteria", required=True, help="criteria TOML file or shipped name")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("calibrate", help="grid-search H and K")
    p.add_argument("--config", required=True, help="calibration grid file or shipped name")
    p.add_argument("--out-dir")
    p.add_argument("--serial", action="store_true")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
