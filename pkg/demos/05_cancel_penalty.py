"""What a bitrate change costs Sprint-x.

Every bitrate change cancels the outstanding range request and reopens the
connection. Compares a player forced to switch every 30 seconds with one
that never switches.

    python demos/05_cancel_penalty.py [--seed 0]
"""

import argparse

from sprintsim.runner import run
from sprintsim.scenario import preset_dict, scenario_from_dict


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for label, abr in (("switch every 30s", None), ("fixed 2000 kbps", "fixed(2000kbps)")):
        d = preset_dict("fig11")
        d["seed"], d["trace"] = args.seed, False
        if abr is not None:
            d["flows"][0]["abr"] = abr
        v = run(scenario_from_dict(d)).summary.video
        print(f"{label:18s} fair share {v.fair_share_pct:5.1f}%  cancels {v.cancels:3d}  "
              f"wasted {v.wasted_bytes / 1e6:5.1f} MB")


if __name__ == "__main__":
    main()
