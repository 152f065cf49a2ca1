"""Run the full analysis on the Stock Management fixtures and print both reports.

usage: python3 scripts/reproduce_stock_management.py [--report text|json]
"""

import argparse
import time

from sdsca import fixture_path
from sdsca.report import RunConfig, render_json, render_text, run_sca


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--report", choices=["text", "json"], default="text")
    args = ap.parse_args()
    render = render_json if args.report == "json" else render_text
    for name in ("stock_management", "stock_management_retrievable"):
        start = time.perf_counter()
        report = run_sca(RunConfig(str(fixture_path(name))))
        elapsed = time.perf_counter() - start
        print(render(report))
        print(f"# {name}: {elapsed:.2f}s\n")


if __name__ == "__main__":
    main()
