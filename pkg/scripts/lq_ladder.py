"""Run the scalar LQ configs and print the median value error per sample size."""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from nncontrol import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def summarize(out_dir):
    path = os.path.join(out_dir, "convergence.csv")
    if not os.path.exists(path):
        return
    rows = list(csv.DictReader(open(path, encoding="utf-8")))
    for M in sorted({int(r["M"]) for r in rows}):
        errs = [float(r["value_error"]) for r in rows if int(r["M"]) == M]
        print(f"  M={M:6d}  median error {np.median(errs):.3e}  ({len(errs)} seeds)")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--solvers", nargs="+", default=["nncontpi", "hybrid_now", "hybrid_laterq"])
    args = p.parse_args(argv)
    for name in args.solvers:
        config = CONFIGS / f"lq_{name}.json"
        print(f"{name}: {config}")
        code = cli.main(["run", str(config)])
        if code:
            return code
        summarize(cli.resolve_output_dir(cli.load_json(config)["output_dir"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
