"""Staged 30 minute runs: the stock sequential player, Sprint and Sprint-x
each competing with one bulk download on a 3 Mbps / 256 KB link.

Each run takes around 10 seconds.

    python demos/03_headline_fairness.py [--seeds 3]
"""

import argparse
import statistics

from sprintsim.runner import run
from sprintsim.scenario import load_preset

ARMS = (("sequential", "fig8"), ("Sprint", "sprint"), ("Sprint-x", "sprint-x"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=1)
    args = ap.parse_args()
    for label, preset in ARMS:
        shares, rates, changes = [], [], []
        for seed in range(args.seeds):
            sc = load_preset(preset, seed=seed, trace=False)
            v = run(sc).summary.video
            shares.append(v.fair_share_pct)
            rates.append(v.median_bitrate)
            changes.append(v.bitrate_changes)
        print(f"{label:10s} fair share {statistics.median(shares):5.1f}%  "
              f"median bitrate {statistics.median(rates) / 1e3:5.0f} kbps  "
              f"bitrate changes {statistics.median(changes):g}")


if __name__ == "__main__":
    main()
