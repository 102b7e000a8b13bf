"""Fairness metrics, session summaries and the per-ACK window trace."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .sim import US_PER_S

TRACE_COLUMNS = (
    "time_us",
    "flow_id",
    "cwnd_bytes",
    "ssthresh_bytes",
    "in_flight_bytes",
    "srtt_us",
    "fair_bdp_bytes",
    "queued_bytes",
    "delivered_bytes",
)
HEARTBEAT_US = 10_000
DEFAULT_WARMUP = 30.0


def jain_fairness(throughputs: Sequence[float]) -> float:
    """Jain's index (sum x)^2 / (n * sum x^2). All zeros count as perfectly fair."""
    xs = [float(x) for x in throughputs]
    if not xs:
        raise ValueError("need at least one throughput")
    if any(x < 0 for x in xs):
        raise ValueError("throughputs must be nonnegative")
    top = max(xs)
    if top == 0:
        return 1.0
    # scale by the largest rate so tiny values do not underflow when squared
    xs = [x / top for x in xs]
    return min(1.0, sum(xs) ** 2 / (len(xs) * sum(x * x for x in xs)))


def unfairness(throughputs: Sequence[float]) -> float:
    return math.sqrt(max(0.0, 1.0 - jain_fairness(throughputs)))


def fair_share_pct(video_throughput: float, total_throughput: float, n_flows: int) -> float:
    if n_flows < 1:
        raise ValueError("n_flows must be at least 1")
    if total_throughput <= 0:
        raise ValueError("total throughput must be positive")
    return 100.0 * video_throughput / (total_throughput / n_flows)


def minute_average(series: Sequence[float], sample_period: float = 1.0, bin_seconds: float = 60.0):
    """Means over consecutive, non-overlapping bins; an incomplete last bin is dropped."""
    per_bin = int(round(bin_seconds / sample_period))
    if per_bin <= 0:
        raise ValueError("bin must hold at least one sample")
    arr = np.asarray(series, dtype=float)
    n_bins = len(arr) // per_bin
    return arr[: n_bins * per_bin].reshape(n_bins, per_bin).mean(axis=1)


# trace -----------------------------------------------------------------------


class FlowTrace:
    """Append-only window trace, one row per ACK plus a 10 ms heartbeat.

    ``ssthresh_bytes`` is written as -1 while the threshold is still unset.
    """

    def __init__(self, link_bandwidth: float, n_flows: int) -> None:
        self.link_bandwidth = link_bandwidth
        self.n_flows = max(1, n_flows)
        self.rows: list[tuple] = []

    def fair_bdp(self, srtt: float) -> int:
        return int(round(self.link_bandwidth / self.n_flows * srtt))

    def record_probe_row(self, flow: Any, time_us: int) -> None:
        conn = flow.conn
        if conn is None:
            return
        s = conn.state
        ss = s.ssthresh if s.ssthresh < (1 << 40) else -1
        srtt = s.srtt if s.has_rtt else 0.0
        self.rows.append(
            (
                time_us,
                str(flow.flow_id),
                s.cwnd,
                ss,
                conn.seq_in_flight,
                int(round(srtt * US_PER_S)),
                self.fair_bdp(srtt),
                flow.link.queued_bytes(flow.flow_id),
                flow.delivered_in_order,
            )
        )

    def for_flow(self, flow_id: Any) -> dict[str, np.ndarray]:
        fid = str(flow_id)
        rows = [r for r in self.rows if r[1] == fid]
        out = {}
        for i, name in enumerate(TRACE_COLUMNS):
            if name == "flow_id":
                continue
            out[name] = np.array([r[i] for r in rows], dtype=np.int64)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            w.writerows(self.rows)


def read_trace_csv(path) -> dict[str, dict[str, np.ndarray]]:
    """Load a trace file into per-flow column arrays."""
    per: dict[str, list] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        for row in r:
            per.setdefault(row[1], []).append(row)
    out = {}
    for fid, rows in per.items():
        cols = {}
        for i, name in enumerate(TRACE_COLUMNS):
            if name != "flow_id":
                cols[name] = np.array([int(x[i]) for x in rows], dtype=np.int64)
        out[fid] = cols
    return out


def inadequate_window_intervals(
    cols: dict[str, np.ndarray],
    t_start_us: int = 0,
    t_end_us: Optional[int] = None,
    min_duration_us: int = 0,
) -> list[tuple[int, int]]:
    """Maximal time spans in which cwnd < fair-BDP and none of the flow's
    packets sit in the bottleneck queue.

    Rows without an RTT estimate yet (fair-BDP 0) are ignored.
    """
    t = cols["time_us"]
    bad = (cols["cwnd_bytes"] < cols["fair_bdp_bytes"]) & (cols["queued_bytes"] == 0)
    bad &= cols["fair_bdp_bytes"] > 0
    sel = t >= t_start_us
    if t_end_us is not None:
        sel &= t <= t_end_us
    t = t[sel]
    bad = bad[sel]
    spans = []
    start = None
    for ti, b in zip(t.tolist(), bad.tolist()):
        if b and start is None:
            start = ti
        elif not b and start is not None:
            spans.append((start, ti))
            start = None
    if start is not None:
        spans.append((start, int(t[-1])))
    return [s for s in spans if s[1] - s[0] >= min_duration_us]


def fraction_below_fair_bdp(cols: dict[str, np.ndarray], t_start_us: int = 0) -> float:
    """Share of trace time (heartbeat rows) with cwnd below fair-BDP."""
    t = cols["time_us"]
    sel = (t >= t_start_us) & (cols["fair_bdp_bytes"] > 0)
    if not sel.any():
        return 0.0
    return float(np.mean(cols["cwnd_bytes"][sel] < cols["fair_bdp_bytes"][sel]))


# summary ---------------------------------------------------------------------


@dataclass
class FlowSummary:
    flow_id: str
    kind: str
    policy: str
    throughput: float  # bytes/s over the measurement window
    active_throughput: float  # bytes/s over the time the flow had data in flight
    fair_share_pct: float
    active_fair_share_pct: float = 0.0  # active throughput vs link capacity / n
    median_bitrate: float = 0.0
    bitrate_changes: int = 0
    rebuffer_count: int = 0
    rebuffer_time: float = 0.0
    cancels: int = 0
    wasted_bytes: int = 0
    loss_events: int = 0
    timeouts: int = 0


SUMMARY_FIELDS = tuple(f.name for f in fields(FlowSummary))


@dataclass
class SessionSummary:
    flows: list[FlowSummary]
    link_throughput: float
    jfi: float
    unfairness: float
    window: tuple[float, float]
    seed: int = 0

    def flow(self, flow_id: Any) -> FlowSummary:
        for f in self.flows:
            if f.flow_id == str(flow_id):
                return f
        raise KeyError(flow_id)

    @property
    def video(self) -> FlowSummary:
        for f in self.flows:
            if f.kind == "video":
                return f
        raise KeyError("no video flow")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            for f in self.flows:
                w.writerow([_fmt(getattr(f, k)) for k in SUMMARY_FIELDS])

    def to_text(self) -> str:
        lines = [
            f"seed: {self.seed}",
            f"window_s: {self.window[0]:.3f} {self.window[1]:.3f}",
            f"link_throughput_bps: {self.link_throughput * 8:.0f}",
            f"jfi: {self.jfi:.4f}",
            f"unfairness: {self.unfairness:.4f}",
        ]
        for f in self.flows:
            lines.append(f"flow {f.flow_id}:")
            for k, v in asdict(f).items():
                if k != "flow_id":
                    lines.append(f"  {k}: {_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def active_seconds(intervals: Iterable[Sequence[float]], t0: float, t1: float) -> float:
    total = 0.0
    for a, b in intervals:
        lo, hi = max(a, t0), min(b, t1)
        if hi > lo:
            total += hi - lo
    return total


def summarize(
    flows: Sequence[Any],
    link: Any,
    window: tuple[float, float],
    competitors: Optional[Sequence[Any]] = None,
    seed: int = 0,
) -> SessionSummary:
    """Per-flow throughput over ``window`` (seconds) plus fairness figures.

    Throughput counts every byte of the flow handed to the receiver, so the
    per-flow numbers add up to the link's delivered bytes over the window.
    Fairness uses ``competitors`` (flow ids) when given, else every flow.
    """
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("measurement window is empty")
    span = t1 - t0
    b0, b1 = int(round(t0 * US_PER_S)), int(round(t1 * US_PER_S))
    tputs = {}
    for f in flows:
        tputs[f.flow_id] = link.delivered_between(f.flow_id, b0, b1) / span
    total = sum(tputs.values())
    n = len(flows)
    out = []
    for f in flows:
        tp = tputs[f.flow_id]
        act = active_seconds(getattr(f, "active_intervals", []), t0, t1)
        delivered = tp * span
        row = FlowSummary(
            flow_id=str(f.flow_id),
            kind=f.kind,
            policy=getattr(f, "policy_name", f.kind),
            throughput=tp,
            active_throughput=delivered / act if act > 0 else 0.0,
            fair_share_pct=fair_share_pct(tp, total, n) if total > 0 else 0.0,
            active_fair_share_pct=fair_share_pct(delivered / act, link.bandwidth, n)
            if act > 0
            else 0.0,
            loss_events=sum(c.loss_events for c in f.connections),
            timeouts=sum(c.timeouts for c in f.connections),
        )
        if f.kind == "video":
            reqs = [r for r in f.requests if t0 <= r.issued_at < t1]
            if reqs:
                row.median_bitrate = statistics.median(r.bitrate for r in reqs)
            row.bitrate_changes = sum(1 for t, _ in f.bitrate_history if t0 <= t < t1)
            row.rebuffer_count = f.player.buffer.rebuffer_count
            row.rebuffer_time = f.player.buffer.rebuffer_time
            row.cancels = f.cancels
            row.wasted_bytes = f.total_wasted
        out.append(row)
    ids = {str(c) for c in competitors} if competitors else {str(f.flow_id) for f in flows}
    sel = [tputs[f.flow_id] for f in flows if str(f.flow_id) in ids]
    jfi = jain_fairness(sel)
    return SessionSummary(out, total, jfi, math.sqrt(max(0.0, 1 - jfi)), window, seed)
