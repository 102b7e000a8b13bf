"""Video player state, throughput/RTT estimation and bitrate selection.

Nothing here looks at TCP internals. ABR algorithms see the buffer level,
the estimator and the ladder; that is the whole interface.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

from .sim import US_PER_S, BottleneckLink, Packet, Simulator, seconds_to_us

SEGMENT_DURATION = 4.0
DEFAULT_TARGET = 120.0
RESTART_THRESHOLD = SEGMENT_DURATION
WATERMARK_GAP = 8.0
DEFAULT_LADDER_KBPS = (200, 400, 600, 900, 1200, 1500, 2000, 3000)

BW_ALPHA = 0.3
BW_REF_BYTES = 250_000


@dataclass
class VideoBufferState:
    """Seconds of downloaded-but-unplayed video and stall bookkeeping.

    Playback begins (and resumes after a stall) once ``restart_threshold``
    seconds are buffered. Time before the first start is startup delay, not
    a rebuffer.
    """

    level: float = 0.0
    target: float = DEFAULT_TARGET
    playing: bool = False
    started: bool = False
    rebuffer_count: int = 0
    rebuffer_time: float = 0.0
    play_time: float = 0.0
    startup_time: float = 0.0
    restart_threshold: float = RESTART_THRESHOLD

    @property
    def watermark(self) -> float:
        return max(0.0, self.target - WATERMARK_GAP)

    def tick(self, dt: float) -> list[str]:
        """Advance playback by ``dt`` wall seconds; returns events ("stall")."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        events = []
        if self.playing:
            played = min(self.level, dt)
            self.level -= played
            self.play_time += played
            if played < dt or self.level <= 0.0:
                self.level = 0.0
                if played < dt:
                    self.playing = False
                    self.rebuffer_count += 1
                    self.rebuffer_time += dt - played
                    events.append("stall")
        elif self.started:
            self.rebuffer_time += dt
        else:
            self.startup_time += dt
        return events

    def add(self, seconds: float) -> list[str]:
        self.level += seconds
        if not self.playing and self.level >= self.restart_threshold:
            self.playing = True
            event = "resume" if self.started else "start"
            self.started = True
            return [event]
        return []


def playback_tick(buffer: VideoBufferState, dt: float) -> tuple[VideoBufferState, list[str]]:
    events = buffer.tick(dt)
    return buffer, events


class BitrateLadder:
    """Strictly increasing set of encodings, in bits/s."""

    def __init__(self, rates: Sequence[float]) -> None:
        rates = [float(r) for r in rates]
        if not rates:
            raise ValueError("bitrate ladder must not be empty")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("bitrate ladder must be strictly increasing")
        if rates[0] <= 0:
            raise ValueError("bitrates must be positive")
        self.rates = tuple(rates)

    @classmethod
    def default(cls) -> "BitrateLadder":
        return cls([k * 1000 for k in DEFAULT_LADDER_KBPS])

    def __len__(self) -> int:
        return len(self.rates)

    def __iter__(self):
        return iter(self.rates)

    def __contains__(self, rate: float) -> bool:
        return float(rate) in self.rates

    def index(self, rate: float) -> int:
        return self.rates.index(float(rate))

    @property
    def lowest(self) -> float:
        return self.rates[0]

    @property
    def highest(self) -> float:
        return self.rates[-1]

    def highest_at_most(self, bps: float) -> float:
        i = bisect.bisect_right(self.rates, bps)
        return self.rates[max(0, i - 1)]

    def closest(self, bps: float) -> float:
        return min(self.rates, key=lambda r: (abs(r - bps), r))


def segment_bytes(bitrate: float, duration: float = SEGMENT_DURATION) -> int:
    return int(round(bitrate * duration / 8))


# estimators ------------------------------------------------------------------


@dataclass
class EstimatorState:
    srtt_app: Optional[float] = None
    bw_ewma: Optional[float] = None
    ewma_weight_sum: float = 0.0
    rtt_samples: int = 0
    bw_samples: int = 0

    @property
    def ready(self) -> bool:
        return self.srtt_app is not None and self.bw_ewma is not None


def update_bandwidth(
    est: EstimatorState,
    request_size: float,
    duration: float,
    alpha: float = BW_ALPHA,
    w_ref: float = BW_REF_BYTES,
) -> EstimatorState:
    """EWMA of per-request throughput; requests smaller than ``w_ref`` bytes
    move the estimate proportionally less."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    sample = request_size / duration
    w = min(1.0, request_size / w_ref)
    if est.bw_ewma is None:
        est.bw_ewma = sample
    else:
        g = alpha * w
        est.bw_ewma = (1 - g) * est.bw_ewma + g * sample
    est.ewma_weight_sum += w
    est.bw_samples += 1
    return est


def record_rtt(est: EstimatorState, sample: float) -> EstimatorState:
    # latest probe wins; no smoothing
    est.srtt_app = sample
    est.rtt_samples += 1
    return est


# ABR -------------------------------------------------------------------------


class Abr(Protocol):
    def select(self, level: float, current: float, est: EstimatorState, now: float) -> float:
        ...


def bw_fraction_select(estimate: Optional[float], fraction: float, ladder: BitrateLadder) -> float:
    """Highest rung at or below ``fraction`` of the estimate (bytes/s)."""
    if not 0 < fraction <= 1.2:
        raise ValueError("fraction must lie in (0, 1.2]")
    if estimate is None:
        return ladder.lowest
    return ladder.highest_at_most(fraction * estimate * 8)


def fixed_select(bitrate: float, ladder: BitrateLadder) -> float:
    if bitrate not in ladder:
        raise ValueError(f"{bitrate} bps is not on the ladder")
    return float(bitrate)


class HuangAbr:
    """Buffer-driven stepping.

    One rung up each time the buffer has grown by ``step`` video-seconds since
    the last decision point, one rung down each time it has shrunk by
    ``step``. The bitrate used just before the current one is never chosen
    again directly; a blocked step skips past it, or holds if nothing lies
    beyond.
    """

    def __init__(self, ladder: BitrateLadder, step: float = 10.0) -> None:
        self.ladder = ladder
        self.step = step
        self.ref_level: Optional[float] = None
        self.previous: Optional[float] = None

    def _move(self, current: float, direction: int) -> float:
        i = self.ladder.index(current) + direction
        while 0 <= i < len(self.ladder):
            cand = self.ladder.rates[i]
            if cand != self.previous:
                return cand
            i += direction
        return current

    def select(self, level: float, current: float, est=None, now: float = 0.0) -> float:
        if self.ref_level is None:
            self.ref_level = level
            return current
        delta = level - self.ref_level
        if abs(delta) < self.step:
            return current
        chosen = self._move(current, 1 if delta > 0 else -1)
        self.ref_level = level
        if chosen != current:
            self.previous = current
        return chosen


def huang_abr_select(abr: HuangAbr, level: float, current: float) -> float:
    return abr.select(level, current)


class BwFractionAbr:
    def __init__(self, ladder: BitrateLadder, fraction: float) -> None:
        if not 0 < fraction <= 1.2:
            raise ValueError("fraction must lie in (0, 1.2]")
        self.ladder = ladder
        self.fraction = fraction

    def select(self, level: float, current: float, est: EstimatorState, now: float = 0.0) -> float:
        return bw_fraction_select(est.bw_ewma, self.fraction, self.ladder)


class FixedAbr:
    def __init__(self, ladder: BitrateLadder, bitrate: float) -> None:
        self.bitrate = fixed_select(bitrate, ladder)

    def select(self, level, current, est=None, now: float = 0.0) -> float:
        return self.bitrate


class PeriodicAbr:
    """Cycles through ``rates``, switching every ``period`` seconds.

    Used to force bitrate changes at a known cadence.
    """

    def __init__(self, ladder: BitrateLadder, period: float, rates: Sequence[float]) -> None:
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = period
        self.rates = [fixed_select(r, ladder) for r in rates]

    def select(self, level, current, est=None, now: float = 0.0) -> float:
        return self.rates[int(now // self.period) % len(self.rates)]


@dataclass
class PlayerLogRow:
    time: float
    level: float
    bitrate: float
    bw_estimate: float
    rtt_estimate: float
    stalled: bool


@dataclass
class Player:
    """Buffer plus estimators for one video session, advanced lazily."""

    buffer: VideoBufferState
    estimator: EstimatorState = field(default_factory=EstimatorState)
    last_sync: float = 0.0
    bitrate: float = 0.0
    started_at: Optional[float] = None
    log: list = field(default_factory=list)

    def sync(self, now: float) -> None:
        if self.started_at is None:
            self.started_at = now
            self.last_sync = now
            return
        dt = now - self.last_sync
        if dt > 0:
            self.buffer.tick(dt)
            self.last_sync = now

    def add_segment(self, now: float, duration: float = SEGMENT_DURATION) -> None:
        self.sync(now)
        self.buffer.add(duration)

    def time_until_level(self, now: float, level: float) -> float:
        """Wall seconds until the buffer drains to ``level`` (inf if paused)."""
        self.sync(now)
        if self.buffer.level <= level:
            return 0.0
        if not self.buffer.playing:
            return math.inf
        return self.buffer.level - level

    def record(self, now: float) -> None:
        self.sync(now)
        est = self.estimator
        self.log.append(
            PlayerLogRow(
                now,
                self.buffer.level,
                self.bitrate,
                est.bw_ewma or 0.0,
                est.srtt_app or 0.0,
                self.buffer.started and not self.buffer.playing,
            )
        )


PROBE_BYTES = 10


class RttProber:
    """Times a 10-byte request/response against the video server once per
    ``interval`` seconds.

    The request travels the delay-only uplink; the response is a real packet
    on the bottleneck, so it waits behind whatever is queued. A dropped
    response simply yields no sample for that round.
    """

    def __init__(
        self,
        sim: Simulator,
        link: BottleneckLink,
        uplink_delay: float,
        estimator: EstimatorState,
        flow_id: Any = "probe",
        interval: float = 1.0,
    ) -> None:
        self.sim = sim
        self.link = link
        self.uplink_us = seconds_to_us(uplink_delay)
        self.estimator = estimator
        self.flow_id = flow_id
        self.interval_us = seconds_to_us(interval)
        self.samples: list[tuple[float, float]] = []
        self._stop_at: Optional[int] = None

    def start(self, at_us: int, stop_us: Optional[int] = None) -> None:
        self._stop_at = stop_us
        self.sim.schedule(at_us, self._fire)

    def _fire(self) -> None:
        now = self.sim.now
        if self._stop_at is not None and now >= self._stop_at:
            return
        self.sim.schedule(now + self.uplink_us, self._respond, now)
        self.sim.schedule(now + self.interval_us, self._fire)

    def _respond(self, issued: int) -> None:
        self.link.send(
            Packet(self.flow_id, PROBE_BYTES, 0, "data", self.sim.now, self._arrive, issued)
        )

    def _arrive(self, p: Packet) -> None:
        sample = (self.sim.now - p.meta) / US_PER_S
        record_rtt(self.estimator, sample)
        self.samples.append((self.sim.now / US_PER_S, sample))


def probe_rtt(prober: RttProber) -> EstimatorState:
    """Fire one probe immediately; the estimator updates when it returns."""
    prober.sim.schedule(prober.sim.now + prober.uplink_us, prober._respond, prober.sim.now)
    return prober.estimator
