"""``sca analyze`` command line entry point.

Exit codes: 0 success, 1 parse or validation error, 2 analysis failure.
"""

from __future__ import annotations

import argparse
import sys

from .parser import ModelParseError
from .report import DASHED_CHOICES, FORMATS, RunConfig, render_json, render_text, run_sca


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sca", description="Structural control analysis of stock-and-flow models")
    sub = ap.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="run the five-step analysis on a model file")
    a.add_argument("path")
    a.add_argument("--format", choices=FORMATS, default=None, help="default: from the file extension")
    a.add_argument("--dashed", choices=DASHED_CHOICES, default="both")
    a.add_argument("--dt", type=float, default=0.25)
    a.add_argument("--samples", type=int, default=16)
    a.add_argument("--seed", type=int, default=42)
    a.add_argument("--dot", metavar="PATH")
    a.add_argument("--report", choices=("text", "json"), default="text")
    a.add_argument(
        "--no-delay-expansion",
        action="store_true",
        help="debug: ignore hidden delay stocks (gives wrong verdicts on purpose)",
    )
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fmt = args.format
    if fmt is None:
        fmt = "xmile" if args.path.lower().endswith((".xmile", ".xml", ".stmx")) else "sdm"
    try:
        cfg = RunConfig(
            input_path=args.path,
            format=fmt,
            dashed_mode=args.dashed,
            dt=args.dt,
            samples=args.samples,
            seed=args.seed,
            dot_path=args.dot,
            report_format=args.report,
            delay_expansion=not args.no_delay_expansion,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        report = run_sca(cfg)
    except ModelParseError as exc:
        for e in exc.errors:
            print(f"{args.path}:{e}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any analysis failure maps to exit 2
        print(f"analysis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(render_json(report) if cfg.report_format == "json" else render_text(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
