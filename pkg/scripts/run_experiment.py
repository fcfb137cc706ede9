"""Run a grid spec (see scripts/specs/) and print the resulting table.

    python scripts/run_experiment.py scripts/specs/sequential_vs_flat.json results/seq
"""

import argparse
import logging
from pathlib import Path

from sfcad.evaluation import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("spec")
    ap.add_argument("out")
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(message)s")
    bundle = run_experiment(args.spec, args.out)
    print((Path(args.out) / "table.txt").read_text())
    for f in bundle["failures"]:
        print(f"FAILED {f['cell']}: {f['error']}: {f['message']}")


if __name__ == "__main__":
    main()
