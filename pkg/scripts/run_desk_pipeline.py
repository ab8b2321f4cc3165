"""Run the full desk-scale pipeline into a workspace and print the collated report.

    python3 scripts/run_desk_pipeline.py --workspace /tmp/ws [--seed 0] [--set translate.epochs=10 ...]
"""

import argparse
import sys
import time

from liquidseg.cli import main


def parse():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--workspace", default="workspace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    return p.parse_args()


if __name__ == "__main__":
    args = parse()
    argv = ["run-all", "--desk", "--workspace", args.workspace, "--seed", str(args.seed)]
    for item in args.overrides:
        argv += ["--set", item]
    start = time.perf_counter()
    code = main(argv)
    print(f"run-all finished with exit code {code} in {(time.perf_counter() - start) / 60:.1f} min")
    sys.exit(code)
