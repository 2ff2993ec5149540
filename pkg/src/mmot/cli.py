"""Command line entry point: ``mmot run | battery | bench``."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import ExperimentConfig, bench_structured, dump_json, run_battery, run_pipeline


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmot", description="Multi-marginal transport solver and verification pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the verification pipeline on one config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="artifact directory (default: out/<name>)")
    run.add_argument("--tol-gap", type=float, default=None)
    run.add_argument("--tol-mass", type=float, default=None)

    bat = sub.add_parser("battery", help="run every config in a directory")
    bat.add_argument("directory")
    bat.add_argument("--out", default="out/battery")
    bat.add_argument("--workers", type=int, default=4)

    bench = sub.add_parser("bench", help="dense vs structured entropic scaling")
    bench.add_argument("config")
    bench.add_argument("--sizes", type=_sizes, required=True)
    bench.add_argument("--epsilon", type=float, default=None)
    bench.add_argument("--sweeps", type=int, default=5)
    bench.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            out = args.out or os.path.join("out", cfg.name)
            rep = run_pipeline(cfg, out, args.seed, args.tol_gap, args.tol_mass)
            print(json.dumps({"name": rep.name, "status": rep.status, "ok": rep.ok, "verdicts": rep.verdicts,
                              "expected": rep.expected, "out": out}, indent=2))
            return 0 if rep.ok else 1
        if args.command == "battery":
            summary = run_battery(args.directory, args.out, args.workers)
            for r in summary.rows:
                print(f"{r['name']:32s} {r['status']:10s} {'ok' if r['matches'] else 'MISMATCH'}")
            print(f"{len(summary.rows)} configs, summary in {args.out}")
            return 0 if summary.ok else 1
        if args.command == "bench":
            cfg = ExperimentConfig.load(args.config)
            rows = bench_structured(cfg, args.sizes, args.epsilon, args.sweeps)
            for r in rows:
                disc = "skipped" if r["dense_skipped"] else f"{r['discrepancy']:.2e}"
                print(f"n={r['n']:4d} structured {r['structured_evals']:>10d} evals {r['structured_ms']:9.1f} ms"
                      f"  dense {r['dense_evals']:>12d} evals  discrepancy {disc}")
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                dump_json(rows, os.path.join(args.out, "bench.json"))
            return 0 if all(r["dense_skipped"] or r["discrepancy"] <= 1e-10 for r in rows) else 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
