"""How big a chunk has to be before TCP reaches its fair share.

Prints the chunk size needed for 90% efficiency over a range of fair-share
bandwidths and RTTs, then the efficiency curve for one path.

    python demos/02_chunk_sizing.py
"""

from sprintsim.chunking import chunk_plan, predict_throughput

BANDWIDTHS_MBPS = (0.5, 1, 1.5, 2, 3, 5, 10)
RTTS_MS = (20, 50, 100, 200, 500)


def main():
    print("chunk size (KB) for eps = 0.1")
    print("Mbps  " + "".join(f"{r:>9}ms" for r in RTTS_MS))
    for bw in BANDWIDTHS_MBPS:
        row = [chunk_plan(bw * 1e6 / 8, r / 1000, 0.1).chunk_size / 1000 for r in RTTS_MS]
        print(f"{bw:4g}  " + "".join(f"{x:11.0f}" for x in row))

    bw, rtt = 2e6 / 8, 0.1
    print("\npredicted efficiency on a 2 Mbps / 100 ms path")
    for kb in (50, 100, 200, 400, 800, 1575, 3200, 6400):
        plan, tput = predict_throughput(kb * 1000, bw, rtt)
        flag = "  (chunk ends before the window reaches the BDP)" if plan.low_confidence else ""
        print(f"  {kb:5d} KB  E={plan.efficiency:.3f}  {tput * 8 / 1e6:.2f} Mbps  "
              f"rounds {plan.r1}+{plan.r2}+{plan.r3}{flag}")


if __name__ == "__main__":
    main()
