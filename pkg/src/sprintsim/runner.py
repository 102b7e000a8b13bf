"""Build a simulation from a :class:`Scenario`, run it, and write its outputs.

Also hosts the canned experiment drivers that need more than one run:
parameter sweeps, the chunk-transfer prediction replay and the segment-size
sweep.
"""

from __future__ import annotations

import copy
import csv
import itertools
import math
import os
import random
import statistics
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from . import chunking
from .dataplane import BulkFlow, DownloadPolicy, VideoSession
from .metrics import HEARTBEAT_US, FlowTrace, SessionSummary, summarize
from .player import (
    BitrateLadder,
    BwFractionAbr,
    FixedAbr,
    HuangAbr,
    PeriodicAbr,
    Player,
    RttProber,
    VideoBufferState,
)
from .scenario import AbrConfig, FlowConfig, Scenario, preset_dict, scenario_from_dict, set_path
from .sim import US_PER_S, BottleneckLink, BottleneckQueue, Simulator, seconds_to_us

PLAYER_LOG_US = US_PER_S


def make_abr(cfg: AbrConfig, ladder: BitrateLadder):
    if cfg.kind == "huang":
        return HuangAbr(ladder)
    if cfg.kind == "bw_fraction":
        return BwFractionAbr(ladder, cfg.fraction)
    if cfg.kind == "fixed":
        return FixedAbr(ladder, cfg.bitrate)
    if cfg.kind == "periodic":
        return PeriodicAbr(ladder, cfg.period, cfg.rates)
    raise ValueError(f"unknown ABR kind {cfg.kind!r}")


@dataclass
class Simulation:
    """A wired-up scenario, ready to run."""

    scenario: Scenario
    sim: Simulator
    link: BottleneckLink
    flows: list
    probers: dict = field(default_factory=dict)
    trace: Optional[FlowTrace] = None
    player_rows: list = field(default_factory=list)

    def flow(self, flow_id: str):
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise KeyError(flow_id)

    @property
    def videos(self) -> list:
        return [f for f in self.flows if f.kind == "video"]

    def run(self, until: Optional[float] = None) -> None:
        self.sim.run_until(seconds_to_us(self.scenario.duration if until is None else until))

    def summary(self) -> SessionSummary:
        sc = self.scenario
        return summarize(self.flows, self.link, sc.window, sc.competitors, sc.seed)


def build(sc: Scenario) -> Simulation:
    sim = Simulator()
    link = BottleneckLink(
        sim, sc.link.bandwidth, sc.link.one_way_delay, BottleneckQueue(sc.link.queue_bytes)
    )
    rng = random.Random(sc.seed)
    out = Simulation(sc, sim, link, [])
    if sc.trace:
        out.trace = FlowTrace(sc.link.bandwidth, len(sc.flows))
    delay = sc.link.one_way_delay
    for fc in sc.flows:
        jitter = rng.uniform(-sc.start_jitter, sc.start_jitter) if sc.start_jitter else 0.0
        # a start pushed before t=0 is reflected back into the run
        start_us = seconds_to_us(abs(fc.start_time + jitter))
        tcp_options = {
            "send_jitter": sc.send_jitter,
            "rng": random.Random(rng.getrandbits(64)),
        }
        if fc.kind == "bulk":
            flow = BulkFlow(sim, link, fc.id, delay, fc.total_bytes, tcp_options)
        else:
            flow = _build_video(sim, link, fc, delay, out, start_us, tcp_options)
        if out.trace is not None:
            _attach_trace(out.trace, flow)
        flow.start(start_us)
        if fc.stop_time is not None:
            sim.schedule(seconds_to_us(fc.stop_time), flow.stop)
        out.flows.append(flow)
    if out.trace is not None:
        sim.schedule(0, _heartbeat, sim, out.trace, out.flows)
    if out.videos:
        sim.schedule(0, _player_log, sim, out.videos, out.player_rows)
    return out


def _build_video(
    sim, link, fc: FlowConfig, delay: float, out: Simulation, start_us: int, tcp_options: dict
):
    ladder = BitrateLadder(fc.ladder)
    policy = copy.copy(fc.policy)
    policy.epsilon = out.scenario.epsilon
    player = Player(VideoBufferState(target=fc.buffer_target))
    flow = VideoSession(
        sim,
        link,
        fc.id,
        policy,
        make_abr(fc.abr, ladder),
        ladder,
        player,
        delay,
        initial_bitrate=fc.initial_bitrate,
        tcp_options=tcp_options,
    )
    prober = RttProber(sim, link, delay, player.estimator, flow_id=f"{fc.id}.probe")
    stop = seconds_to_us(fc.stop_time) if fc.stop_time is not None else None
    prober.start(start_us, stop)
    out.probers[fc.id] = prober
    return flow


def _attach_trace(trace: FlowTrace, flow) -> None:
    def on_conn(f, conn):
        conn.on_ack_hook = lambda c: c is f.conn and trace.record_probe_row(f, f.sim.now)

    flow.on_connection = on_conn


def _heartbeat(sim: Simulator, trace: FlowTrace, flows) -> None:
    now = sim.now
    for f in flows:
        trace.record_probe_row(f, now)
    sim.schedule(now + HEARTBEAT_US, _heartbeat, sim, trace, flows)


def _player_log(sim: Simulator, videos, rows: list) -> None:
    now = sim.now
    for v in videos:
        if v.player.started_at is None:
            continue
        v.player.sync(now / US_PER_S)
        est = v.player.estimator
        buf = v.player.buffer
        rows.append(
            (
                now,
                str(v.flow_id),
                round(buf.level, 6),
                int(v.bitrate),
                round(est.bw_ewma or 0.0, 3),
                round(est.srtt_app or 0.0, 6),
                int(buf.started and not buf.playing),
            )
        )
    sim.schedule(now + PLAYER_LOG_US, _player_log, sim, videos, rows)


# outputs -----------------------------------------------------------------------

REQUEST_COLUMNS = (
    "flow_id",
    "segment_index",
    "n_segments",
    "issued_at_us",
    "completed_at_us",
    "size_bytes",
    "bitrate_bps",
    "policy",
    "canceled",
)
PLAYER_COLUMNS = (
    "time_us",
    "flow_id",
    "buffer_s",
    "bitrate_bps",
    "bw_estimate_Bps",
    "rtt_estimate_s",
    "stalled",
)


def _us(t: Optional[float]) -> str:
    return "" if t is None else str(seconds_to_us(t))


def request_rows(sim_obj: Simulation) -> list[tuple]:
    rows = []
    for f in sim_obj.flows:
        for r in getattr(f, "requests", []):
            rows.append(
                (
                    str(f.flow_id),
                    r.segment_index,
                    r.n_segments,
                    _us(r.issued_at),
                    _us(r.completed_at),
                    r.size,
                    int(round(r.bitrate)),
                    r.policy,
                    int(r.canceled),
                )
            )
    return rows


@dataclass
class RunResult:
    summary: SessionSummary
    simulation: Simulation
    files: dict = field(default_factory=dict)


def write_outputs(s: Simulation, summary: SessionSummary, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    files["summary.csv"] = os.path.join(out_dir, "summary.csv")
    summary.write_csv(files["summary.csv"])
    files["summary.txt"] = os.path.join(out_dir, "summary.txt")
    with open(files["summary.txt"], "w") as fh:
        fh.write(summary.to_text())
    if s.trace is not None:
        files["trace.csv"] = os.path.join(out_dir, "trace.csv")
        s.trace.write_csv(files["trace.csv"])
    files["requests.csv"] = os.path.join(out_dir, "requests.csv")
    _write(files["requests.csv"], REQUEST_COLUMNS, request_rows(s))
    files["player.csv"] = os.path.join(out_dir, "player.csv")
    _write(files["player.csv"], PLAYER_COLUMNS, s.player_rows)
    return files


def _write(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run(sc: Scenario, out_dir=None) -> RunResult:
    """Run one scenario to completion; write files when ``out_dir`` is given."""
    s = build(sc)
    s.run()
    summary = s.summary()
    files = write_outputs(s, summary, out_dir) if out_dir is not None else {}
    return RunResult(summary, s, files)


def run_seeds(sc: Scenario, seeds: Sequence[int]) -> list[SessionSummary]:
    return [run(sc.with_seed(seed)).summary for seed in seeds]


# sweeps ------------------------------------------------------------------------

SWEEP_METRICS = ("fair_share_pct", "active_fair_share_pct", "throughput", "median_bitrate")


def _cell(args) -> dict:
    data, seeds, point = args
    sc = scenario_from_dict(data)
    sums = run_seeds(sc, seeds)
    row = dict(point)
    row["unfairness"] = statistics.median(s.unfairness for s in sums)
    row["jfi"] = statistics.median(s.jfi for s in sums)
    first = sums[0].flows
    for i, fs in enumerate(first):
        for m in SWEEP_METRICS:
            row[f"{fs.flow_id}.{m}"] = statistics.median(getattr(s.flows[i], m) for s in sums)
    return row


def sweep(
    base: dict,
    dimensions: dict[str, Sequence[Any]],
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> list[dict]:
    """Cartesian grid over dotted-path ``dimensions`` of a scenario dict.

    Each cell reports the median over ``seeds``. Cells come back in grid order
    whether or not they ran in parallel.
    """
    if not dimensions:
        raise ValueError("sweep needs at least one dimension")
    keys = list(dimensions)
    jobs = []
    for combo in itertools.product(*(dimensions[k] for k in keys)):
        data = copy.deepcopy(base)
        for k, v in zip(keys, combo):
            set_path(data, k, v)
        jobs.append((data, list(seeds), dict(zip(keys, combo))))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_cell, jobs))
    return [_cell(j) for j in jobs]


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{r[c]:.4f}" if isinstance(r[c], float) else r[c] for c in cols])


# chunk-transfer prediction replay ---------------------------------------------


@dataclass
class TransferSample:
    size: int
    duration: float
    ssthresh: Optional[int]

    @property
    def throughput(self) -> float:
        return self.size / self.duration


def chunk_transfers(
    bandwidth: float,
    one_way_delay: float,
    queue_bytes: int,
    chunk: int,
    transfers: int = 10,
    pause: Optional[float] = None,
    competitor: bool = False,
    seed: int = 0,
    skip: int = 1,
) -> list[TransferSample]:
    """Time ``transfers`` back-to-back chunk downloads separated by idle gaps
    long enough for the window to restart. The first ``skip`` transfers
    (which start from a cold connection) are discarded."""
    rtt = 2 * one_way_delay
    if pause is None:
        pause = max(4.0, 3 * (rtt + queue_bytes / bandwidth) + 1.0)
    flows = [
        {
            "id": "video",
            "kind": "video",
            "policy": {
                "kind": "sequential",
                "segment_size": f"{chunk}B",
                "pause_between_requests": f"{pause}s",
            },
            "abr": "huang",
            "buffer_target": "100000s",
        }
    ]
    if competitor:
        flows.append({"id": "bulk", "kind": "bulk"})
    data = {
        "link": {
            "bandwidth": f"{bandwidth * 8}bps",
            "one_way_delay": f"{one_way_delay}s",
            "queue": f"{queue_bytes}B",
        },
        "duration": "100000s",
        "warmup": "0s",
        "trace": False,
        "seed": seed,
        "flows": flows,
    }
    s = build(scenario_from_dict(data))
    video = s.flow("video")
    done: list = []

    def on_done(req):
        done.append(req)
        if len(done) >= transfers + skip:
            s.sim.stop()

    video.request_listeners.append(on_done)
    s.run()
    return [
        TransferSample(r.size, r.completed_at - r.issued_at, r.start_ssthresh)
        for r in done[skip:]
    ]


@dataclass
class PredictionPoint:
    queue_bytes: int
    rtt: float
    chunk: int
    sst: float
    predicted: float  # bytes/s
    measured: float  # bytes/s
    low_confidence: bool

    @property
    def error(self) -> float:
        return (self.measured - self.predicted) / self.predicted


FIG6_BANDWIDTH = 2.5e6 / 8
FIG6_QUEUES = (250_000, 31_000)
FIG6_ONE_WAY = (0.05, 0.1, 0.2, 0.35, 0.5)
FIG6_CHUNKS = (117_000, 250_000, 500_000, 1_000_000, 1_800_000)


def prediction_replay(
    bandwidth: float = FIG6_BANDWIDTH,
    queues: Sequence[int] = FIG6_QUEUES,
    one_way_delays: Sequence[float] = FIG6_ONE_WAY,
    chunks: Sequence[int] = FIG6_CHUNKS,
    transfers: int = 10,
    seed: int = 0,
    corrected: bool = False,
) -> list[PredictionPoint]:
    """Predicted vs simulated chunk throughput over a grid.

    The prediction is fed the measured mean slow-start threshold at the start
    of each transfer, the chunk size and the link bandwidth; its BDP uses the
    propagation RTT.
    """
    points = []
    for q in queues:
        for d in one_way_delays:
            for c in chunks:
                samples = chunk_transfers(bandwidth, d, q, c, transfers, seed=seed)
                ssts = [x.ssthresh for x in samples if x.ssthresh is not None]
                sst = statistics.mean(ssts) if ssts else 0.75 * bandwidth * 2 * d
                measured = statistics.mean(x.throughput for x in samples)
                plan, pred = chunking.predict_throughput(
                    c, bandwidth, 2 * d, sst=sst, corrected=corrected
                )
                points.append(
                    PredictionPoint(q, 2 * d, c, sst, pred, measured, plan.low_confidence)
                )
    return points


# segment-size sweep against a bulk flow ----------------------------------------

FIG7_SIZES = tuple(k * 1000 for k in (32, 64, 128, 256, 512, 1024, 2048))


def segment_size_throughput(
    segment_size: int,
    transfers: int = 50,
    bandwidth: float = 3e6 / 8,
    one_way_delay: float = 0.01,
    queue_bytes: int = 256_000,
    warmup: float = 20.0,
    seed: int = 0,
) -> list[float]:
    """Throughputs (bytes/s) of sequential segment downloads competing with
    one bulk flow, counting only transfers issued after ``warmup``."""
    data = preset_dict("fig7")
    data["seed"] = seed
    data["duration"] = "100000s"
    data["link"] = {
        "bandwidth": f"{bandwidth * 8}bps",
        "one_way_delay": f"{one_way_delay}s",
        "queue": f"{queue_bytes}B",
    }
    data["flows"][0]["policy"]["segment_size"] = f"{segment_size}B"
    data["flows"][0]["buffer_target"] = "100000s"
    s = build(scenario_from_dict(data))
    video = s.flow("video")
    out: list[float] = []

    def on_done(req):
        if req.issued_at >= warmup:
            out.append(req.size / (req.completed_at - req.issued_at))
            if len(out) >= transfers:
                s.sim.stop()

    video.request_listeners.append(on_done)
    s.run()
    return out


def segment_size_sweep(
    sizes: Sequence[int] = FIG7_SIZES,
    transfers: int = 50,
    seed: int = 0,
    runs: int = 5,
    **kw,
) -> list[tuple[int, float]]:
    """Median throughput per segment size, pooling ``transfers`` downloads
    spread evenly over ``runs`` independently seeded simulations."""
    per_run = max(1, transfers // runs)
    out = []
    for size in sizes:
        xs: list[float] = []
        for k in range(runs):
            xs += segment_size_throughput(size, per_run, seed=seed + k, **kw)
        out.append((size, statistics.median(xs)))
    return out
