"""Tree heights of the three overlays over many seeded populations."""

import argparse
import csv
import sys

from fybrr.model import ScoreParams
from fybrr.overlay import create_room, height, join_peer
from fybrr.sim.baseline import baseline_height, build_baseline
from fybrr.sim.population import draw_population


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--populations", type=int, default=100)
    ap.add_argument("--peers", type=int, default=57)
    args = ap.parse_args()
    params = ScoreParams()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["seed", "quad", "fybrr", "binary", "ordered"])
    ok = 0
    for seed in range(args.populations):
        peers = draw_population(seed, args.peers, 2.5, params)
        room = create_room("r", peers[0], 2.5, params)
        for p in peers[1:]:
            join_peer(room, p)
        hq = baseline_height(build_baseline("QUAD", peers))
        hb = baseline_height(build_baseline("BINARY", peers))
        hf = height(room)
        ordered = hq <= hf <= hb
        ok += ordered
        w.writerow([seed, hq, hf, hb, int(ordered)])
    print(f"# ordering held in {ok}/{args.populations}", file=sys.stderr)
    return 0 if ok == args.populations else 1


if __name__ == "__main__":
    sys.exit(main())
