"""Random join/leave/fail/stats workloads with structural checks and log replay."""

import argparse
import sys

from fybrr.fuzz import fuzz_run, replay_matches
from fybrr.model import ScoreParams


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--ops", type=int, default=1000)
    ap.add_argument("--slot-mode", choices=["bucketed", "ratio"], default="bucketed")
    args = ap.parse_args()
    params = ScoreParams(slot_mode=args.slot_mode)
    failures = 0
    for seed in range(args.seeds):
        rep = fuzz_run(seed, args.ops, params)
        replayed = replay_matches(rep)
        status = "ok" if rep.ok and replayed else "FAIL"
        failures += status != "ok"
        print(f"seed {seed:>4} {status} ops={rep.ops} violations={len(rep.violations)} "
              f"stranded={len(rep.stranded)} replay={'match' if replayed else 'MISMATCH'} counts={rep.counts}")
        for step, op, msg in rep.violations[:5]:
            print(f"    step {step} {op}: {msg}")
    print(f"{args.seeds - failures}/{args.seeds} seeds clean")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
