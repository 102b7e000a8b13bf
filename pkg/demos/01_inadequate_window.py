"""Why sequential segment downloads lose to a bulk flow.

Runs the three 60 second single-segment-size scenarios and reports how often
the video connection sat with a window below its fair-share BDP while none of
its packets were queued at the bottleneck.

    python demos/01_inadequate_window.py [--out DIR]
"""

import argparse

from sprintsim.metrics import fraction_below_fair_bdp, inadequate_window_intervals
from sprintsim.runner import build
from sprintsim.scenario import PRESET_NOTES, load_preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name in ("fig5a", "fig5b", "fig5c"):
        s = build(load_preset(name, seed=args.seed))
        s.run()
        video = s.flow("video")
        cols = s.trace.for_flow("video")
        spans = inadequate_window_intervals(cols)
        first_done = video.requests[0].completed_at or 0.0
        below = fraction_below_fair_bdp(cols, int(first_done * 1e6))
        summ = s.summary()
        print(f"{name}: {PRESET_NOTES[name]}")
        print(f"  video throughput {summ.video.throughput * 8 / 1e6:.2f} Mbps, "
              f"fair share {summ.video.fair_share_pct:.0f}%")
        print(f"  inadequate-window intervals: {len(spans)}")
        for a, b in spans[:8]:
            print(f"    t={a / 1e6:6.2f}s  for {(b - a) / 1e3:.0f} ms")
        print(f"  cwnd below fair-BDP for {below:.0%} of the time after the first segment")


if __name__ == "__main__":
    main()
