"""Join-to-first-packet delay against join index, with a least-squares slope per seed."""

import argparse
import statistics
import sys

from fybrr.sim.config import SimConfig
from fybrr.sim.engine import run_simulation


def slope(ys):
    xs = range(len(ys))
    mx, my = statistics.fmean(xs), statistics.fmean(ys)
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sum((x - mx) ** 2 for x in xs)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--scheme", default="FYBRR")
    args = ap.parse_args()
    for seed in range(args.seeds):
        res = run_simulation(SimConfig(seed=seed, scheme=args.scheme))
        order = sorted(res.join_times, key=res.join_times.get)
        ys = [res.report.nodes[p].startup_delay for p in order]
        print(f"seed {seed}: mean {statistics.fmean(ys):.4f} s  slope {slope(ys) * 1000:+.4f} ms/join")
    return 0


if __name__ == "__main__":
    sys.exit(main())
