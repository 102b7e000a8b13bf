"""Fair share of the sequential player and of Sprint as the bottleneck queue
grows, for a few link speeds. Cells are medians over the given seeds.

The full grid (3 bandwidths x 3 queues x 2 policies x 3 seeds) takes several
minutes on one core; ``--workers`` runs cells in parallel.

    python demos/04_queue_sweep.py [--seeds 3] [--workers 4] [--out DIR]
"""

import argparse
import os

from sprintsim.runner import sweep, write_table
from sprintsim.scenario import preset_dict


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()
    base = preset_dict("table3")
    base["trace"] = False
    dims = {
        "link.bandwidth": ["1.5Mbps", "3Mbps", "6Mbps"],
        "link.queue": ["128KB", "256KB", "512KB"],
        "flows.0.policy.kind": ["sequential", "pipelined_train"],
    }
    rows = sweep(base, dims, seeds=range(args.seeds), workers=args.workers)
    for r in rows:
        print(f"{r['link.bandwidth']:>7} {r['link.queue']:>6} {r['flows.0.policy.kind']:16s}"
              f" fair share {r['video.fair_share_pct']:5.1f}%  unfairness {r['unfairness']:.3f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_table(rows, os.path.join(args.out, "queue_sweep.csv"))


if __name__ == "__main__":
    main()
