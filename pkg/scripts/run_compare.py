"""All three schemes on shared seeds; writes CSVs and prints the ordering table."""

import argparse
import sys

from fybrr.cli import parse_seeds
from fybrr.sim.compare import compare
from fybrr.sim.config import load_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--out-dir", default="results/compare")
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--churn", type=float, default=0.0, help="leave, fail and rejoin rate per second")
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.churn:
        cfg = cfg.replace(leave_rate=args.churn, fail_rate=args.churn, rejoin_rate=args.churn)
    cmp = compare(cfg, parse_seeds(args.seeds), args.out_dir, jobs=args.jobs)
    for row in cmp.table():
        print("{:<7} latency {:7.3f} ms  jitter {:7.4f} ms  pdr {:.5f}  height {:5.2f}  util {:.3f}".format(*row))
    print(cmp.verdict_text(), end="")
    print(f"files in {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
