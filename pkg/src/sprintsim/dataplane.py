"""How a video player turns segment requests into bytes on a TCP connection.

Four download policies share one session object:

* ``bulk``: the server always has data (the competing flow).
* ``sequential``: one segment request at a time, the next issued only after
  the previous response has fully arrived (the stock DASH behaviour).
* ``pipelined_train``: segment requests are pipelined in trains whose total
  size is the adaptive chunk size; a bounded number are outstanding at once.
* ``expanded_range``: one range request spans at least a chunk; a bitrate
  change in mid-range cancels the request and reopens the connection.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import chunking
from .player import SEGMENT_DURATION, BitrateLadder, Player, segment_bytes, update_bandwidth
from .sim import US_PER_S, BottleneckLink, Simulator, seconds_to_us
from .tcp import TcpConnection, saved_ssthresh

POLICY_KINDS = ("bulk", "sequential", "pipelined_train", "expanded_range")
REQUEST_BYTES = 100


@dataclass
class DownloadPolicy:
    kind: str = "sequential"
    pause_between_requests: float = 0.0
    train_size: Optional[int] = None  # bytes; None = adaptive chunk size
    outstanding_limit: Optional[int] = None  # None = max(2, ceil(bdp/segment))
    enforce_min_train_on_resume: bool = True
    segment_size: Optional[int] = None  # fixed response size, overrides bitrate
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.pause_between_requests < 0:
            raise ValueError("pause_between_requests must be nonnegative")
        if self.kind == "pipelined_train" and self.outstanding_limit is not None:
            if self.outstanding_limit < 2:
                raise ValueError("pipelined trains need outstanding_limit >= 2")
        if self.segment_size is not None and self.segment_size <= 0:
            raise ValueError("segment_size must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class SegmentRequest:
    segment_index: int
    bitrate: float
    size: int
    issued_at: float
    n_segments: int = 1
    completed_at: Optional[float] = None
    canceled: bool = False
    policy: str = ""
    connection: int = 0
    start_cwnd: Optional[int] = None
    start_ssthresh: Optional[int] = None

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("request size must be positive")

    @property
    def duration(self) -> Optional[float]:
        if self.completed_at is None:
            return None
        return self.completed_at - self.issued_at


@dataclass(frozen=True)
class TrainSpec:
    n_segments: int
    outstanding_limit: int


def build_pipeline_train(chunk_size: float, segment_size: float, bdp_estimate: float) -> TrainSpec:
    """Segments per train and how many of them to keep outstanding.

    Enough requests stay outstanding that the queued responses cover one
    BDP, and never fewer than two so the server is not left waiting.
    """
    if segment_size <= 0:
        raise ValueError("segment size must be positive")
    n = max(1, math.ceil(chunk_size / segment_size))
    outstanding = max(2, math.ceil(bdp_estimate / segment_size))
    return TrainSpec(n, outstanding)


def resume_after_pause(
    train: TrainSpec,
    headroom: float,
    enforce_min_train: bool,
    segment_duration: float = SEGMENT_DURATION,
) -> TrainSpec:
    """Train to issue when downloading resumes with ``headroom`` video-seconds
    left below the buffer target.

    With the minimum train enforced the whole train goes out even if it
    overfills the buffer (by at most one train). Without it, only enough
    segments to reach the target are requested.
    """
    if enforce_min_train:
        return train
    fit = max(1, math.ceil(headroom / segment_duration))
    return TrainSpec(min(train.n_segments, fit), train.outstanding_limit)


@dataclass(frozen=True)
class ByteRange:
    start: int
    end: int
    n_segments: int

    @property
    def length(self) -> int:
        return self.end - self.start


def expanded_range_request(chunk_size: float, position: int, segment_size: int) -> ByteRange:
    """Range starting at ``position`` covering at least ``chunk_size`` bytes,
    rounded up to whole segments (and never less than one segment)."""
    if segment_size <= 0:
        raise ValueError("segment size must be positive")
    n = max(1, math.ceil(chunk_size / segment_size))
    return ByteRange(position, position + n * segment_size, n)


class _Pending:
    __slots__ = ("end", "request", "index", "size", "last")

    def __init__(self, end: int, request: SegmentRequest, index: int, size: int, last: bool):
        self.end = end
        self.request = request
        self.index = index
        self.size = size
        self.last = last


class Flow:
    """Common interface for anything the runner drives on the bottleneck."""

    flow_id: Any
    kind: str
    conn: Optional[TcpConnection]
    connections: list

    def start(self, at_us: int) -> None:
        raise NotImplementedError

    def stop(self) -> None:
        raise NotImplementedError

    @property
    def delivered_in_order(self) -> int:
        raise NotImplementedError


class BulkFlow(Flow):
    """Server always has data; limited by TCP only."""

    kind = "bulk"
    policy_name = "bulk"

    def __init__(
        self,
        sim: Simulator,
        link: BottleneckLink,
        flow_id: Any,
        uplink_delay: float,
        total: Optional[int] = None,
        tcp_options: Optional[dict] = None,
    ) -> None:
        self.sim = sim
        self.tcp_options = tcp_options or {}
        self.link = link
        self.flow_id = flow_id
        self.uplink_delay = uplink_delay
        self.total = total
        self.conn: Optional[TcpConnection] = None
        self.connections: list[TcpConnection] = []
        self.wasted_bytes = 0
        self.requests: list[SegmentRequest] = []
        self.active_intervals: list[list[float]] = []
        self.on_connection: Optional[Callable[[Flow, TcpConnection], None]] = None

    def start(self, at_us: int) -> None:
        self.sim.schedule(at_us, self._open)

    def _open(self) -> None:
        self.conn = TcpConnection(
            self.sim, self.link, self.flow_id, self.uplink_delay, **self.tcp_options
        )
        self.connections.append(self.conn)
        if self.on_connection is not None:
            self.on_connection(self, self.conn)
        # request travels up, then the server starts streaming
        self.sim.schedule_in(seconds_to_us(self.uplink_delay), self._serve)
        self.active_intervals.append([self.sim.now / US_PER_S, math.inf])

    def _serve(self) -> None:
        if self.conn is None or not self.conn.open:
            return
        if self.total is None:
            self.conn.set_unbounded()
        else:
            self.conn.push(self.total)

    def stop(self) -> None:
        if self.conn is not None and self.conn.open:
            self.conn.close()
            if self.active_intervals:
                self.active_intervals[-1][1] = self.sim.now / US_PER_S

    @property
    def delivered_in_order(self) -> int:
        return sum(c.rcv_nxt for c in self.connections)


def bulk_source(
    sim: Simulator, link: BottleneckLink, flow_id: Any, uplink_delay: float, total: Optional[int] = None
) -> BulkFlow:
    return BulkFlow(sim, link, flow_id, uplink_delay, total)


class VideoSession(Flow):
    """One video player downloading over the bottleneck with a given policy."""

    kind = "video"

    def __init__(
        self,
        sim: Simulator,
        link: BottleneckLink,
        flow_id: Any,
        policy: DownloadPolicy,
        abr: Any,
        ladder: BitrateLadder,
        player: Player,
        uplink_delay: float,
        segment_duration: float = SEGMENT_DURATION,
        initial_bitrate: Optional[float] = None,
        tcp_options: Optional[dict] = None,
    ) -> None:
        if policy.kind == "bulk":
            raise ValueError("use BulkFlow for bulk transfers")
        self.sim = sim
        self.link = link
        self.flow_id = flow_id
        self.tcp_options = tcp_options or {}
        self.policy = policy
        self.policy_name = policy.kind
        self.abr = abr
        self.ladder = ladder
        self.player = player
        self.uplink_delay = uplink_delay
        self.uplink_us = seconds_to_us(uplink_delay)
        self.segment_duration = segment_duration
        self.bitrate = initial_bitrate if initial_bitrate is not None else ladder.lowest
        self.player.bitrate = self.bitrate
        self.conn: Optional[TcpConnection] = None
        # per-server ssthresh memory carried across reconnects
        self._saved_ssthresh: Optional[int] = None
        self.connections: list[TcpConnection] = []
        self.on_connection: Optional[Callable[[Flow, TcpConnection], None]] = None
        self.requests: list[SegmentRequest] = []
        self.request_listeners: list[Callable[[SegmentRequest], None]] = []
        self.bitrate_history: list[tuple[float, float]] = []
        self.next_segment = 0
        self.cancels = 0
        self.wasted_bytes = 0
        self.active_intervals: list[list[float]] = []
        self.stopped = False
        self._pending: deque[_Pending] = deque()
        self._conn_requested = 0
        self._delivered_base = 0
        self._last_done = 0.0
        self._paused = False
        self._wake_event: Optional[int] = None
        self._outstanding = 0
        self._train_left = 0
        self._train_limit = 2
        self._range_bitrate: Optional[float] = None
        self._range_left = 0
        self._connecting = False

    # lifecycle ---------------------------------------------------------------

    @property
    def now(self) -> float:
        return self.sim.now / US_PER_S

    def start(self, at_us: int) -> None:
        self.sim.schedule(at_us, self._begin)

    def _begin(self) -> None:
        self.player.sync(self.now)
        self._open_connection()
        self._kick()

    def stop(self) -> None:
        self.stopped = True
        if self.conn is not None and self.conn.open:
            self.conn.close()
        if self._wake_event is not None:
            self.sim.cancel(self._wake_event)
            self._wake_event = None
        self._mark_idle()

    def _open_connection(self) -> None:
        if self.conn is not None:
            self._delivered_base += self.conn.rcv_nxt
            old = self.conn
            self._saved_ssthresh = saved_ssthresh(
                old.state, old.in_recovery, self._saved_ssthresh
            )
        self.conn = TcpConnection(
            self.sim,
            self.link,
            self.flow_id,
            self.uplink_delay,
            on_deliver=self._on_deliver,
            initial_ssthresh=self._saved_ssthresh,
            **self.tcp_options,
        )
        self.connections.append(self.conn)
        if self.on_connection is not None:
            self.on_connection(self, self.conn)
        self._conn_requested = 0
        self._pending.clear()

    @property
    def delivered_in_order(self) -> int:
        return self._delivered_base + (self.conn.rcv_nxt if self.conn else 0)

    # buffer helpers ----------------------------------------------------------

    def _pending_seconds(self) -> float:
        return len(self._pending) * self.segment_duration

    def headroom(self) -> float:
        self.player.sync(self.now)
        return self.player.buffer.target - self.player.buffer.level - self._pending_seconds()

    def buffer_full(self) -> bool:
        return self.headroom() <= 0

    def _mark_active(self) -> None:
        if not self.active_intervals or self.active_intervals[-1][1] != math.inf:
            self.active_intervals.append([self.now, math.inf])

    def _mark_idle(self) -> None:
        if self.active_intervals and self.active_intervals[-1][1] == math.inf:
            self.active_intervals[-1][1] = self.now

    def _pause(self) -> None:
        """Stop issuing until the buffer drains to the watermark."""
        if self._paused or self.stopped:
            return
        self._paused = True
        wait = self.player.time_until_level(self.now, self.player.buffer.watermark)
        if math.isinf(wait):
            wait = self.segment_duration
        self._wake_event = self.sim.schedule(
            self.sim.now + max(1, seconds_to_us(wait)), self._wake
        )

    def _wake(self) -> None:
        self._wake_event = None
        self._paused = False
        if self.stopped:
            return
        self.player.sync(self.now)
        if self.player.buffer.level > self.player.buffer.watermark:
            self._pause()
            return
        self._resume()

    # bitrate & sizing --------------------------------------------------------

    def _choose_bitrate(self) -> float:
        self.player.sync(self.now)
        chosen = self.abr.select(
            self.player.buffer.level, self.bitrate, self.player.estimator, self.now
        )
        if chosen != self.bitrate:
            self.bitrate_history.append((self.now, chosen))
        self.bitrate = chosen
        self.player.bitrate = chosen
        return chosen

    def _segment_size(self, bitrate: float) -> int:
        if self.policy.segment_size is not None:
            return self.policy.segment_size
        return segment_bytes(bitrate, self.segment_duration)

    def _chunk_size(self) -> Optional[float]:
        if self.policy.train_size is not None:
            return self.policy.train_size
        est = self.player.estimator
        if not est.ready:
            return None
        return chunking.get_chunk_size(est.bw_ewma, est.srtt_app, self.policy.epsilon)

    def _bdp_estimate(self) -> float:
        est = self.player.estimator
        if not est.ready:
            return 0.0
        return est.bw_ewma * est.srtt_app

    # request plumbing --------------------------------------------------------

    def _issue(self, bitrate: float, n_segments: int = 1) -> SegmentRequest:
        seg_size = self._segment_size(bitrate)
        req = SegmentRequest(
            segment_index=self.next_segment,
            bitrate=seg_size * 8 / self.segment_duration
            if self.policy.segment_size is not None
            else bitrate,
            size=seg_size * n_segments,
            issued_at=self.now,
            n_segments=n_segments,
            policy=self.policy.kind,
            connection=len(self.connections) - 1,
        )
        for i in range(n_segments):
            self._conn_requested += seg_size
            self._pending.append(
                _Pending(self._conn_requested, req, self.next_segment, seg_size, i == n_segments - 1)
            )
            self.next_segment += 1
        self.requests.append(req)
        self._mark_active()
        self.sim.schedule(self.sim.now + self.uplink_us, self._arrive_at_server, self.conn, req)
        return req

    def _arrive_at_server(self, conn: TcpConnection, req: SegmentRequest) -> None:
        if conn is not self.conn or not conn.open or req.canceled:
            return
        conn.push(req.size)
        req.start_cwnd = conn.state.cwnd
        req.start_ssthresh = conn.state.ssthresh

    def _on_deliver(self, conn: TcpConnection, rcv_nxt: int) -> None:
        if conn is not self.conn:
            return
        pending = self._pending
        while pending and pending[0].end <= rcv_nxt:
            entry = pending.popleft()
            self._segment_done(entry)
            if conn is not self.conn or self.stopped:
                return

    def _segment_done(self, entry: _Pending) -> None:
        now = self.now
        start = max(entry.request.issued_at, self._last_done)
        self._last_done = now
        if now > start:
            update_bandwidth(self.player.estimator, entry.size, now - start)
        self.player.add_segment(now, self.segment_duration)
        if entry.last:
            entry.request.completed_at = now
            if not self._pending:
                self._mark_idle()
            for fn in self.request_listeners:
                fn(entry.request)
        if self.stopped:
            return
        self._on_segment(entry)

    # policy hooks ------------------------------------------------------------

    def _kick(self) -> None:
        kind = self.policy.kind
        if kind == "sequential":
            self._seq_next()
        elif kind == "pipelined_train":
            self._fill()
        else:
            self._next_range()

    def _resume(self) -> None:
        if self.policy.kind == "pipelined_train":
            self._train_left = 0
        self._kick()

    def _on_segment(self, entry: _Pending) -> None:
        kind = self.policy.kind
        if kind == "sequential":
            if self.policy.pause_between_requests > 0:
                self.sim.schedule(
                    self.sim.now + seconds_to_us(self.policy.pause_between_requests),
                    self._seq_next,
                )
            else:
                self._seq_next()
        elif kind == "pipelined_train":
            self._outstanding -= 1
            self._fill()
        else:
            self._range_segment_done(entry)

    # sequential ----------------------------------------------------------------

    def _seq_next(self) -> None:
        if self.stopped or self._paused:
            return
        if self.buffer_full():
            self._pause()
            return
        self._issue(self._choose_bitrate())

    # pipelined trains ----------------------------------------------------------

    def _plan_train(self) -> int:
        bitrate = self._choose_bitrate()
        seg = self._segment_size(bitrate)
        chunk = self._chunk_size()
        train = build_pipeline_train(chunk or seg, seg, self._bdp_estimate())
        if self.policy.outstanding_limit is not None:
            train = TrainSpec(train.n_segments, self.policy.outstanding_limit)
        train = resume_after_pause(
            train,
            self.headroom(),
            self.policy.enforce_min_train_on_resume,
            self.segment_duration,
        )
        self._train_limit = train.outstanding_limit
        return train.n_segments

    def _fill(self) -> None:
        if self.stopped or self._paused:
            return
        enforce = self.policy.enforce_min_train_on_resume
        while self._outstanding < self._train_limit:
            if self._train_left == 0:
                if self.buffer_full():
                    break
                self._train_left = self._plan_train()
                bitrate = self.bitrate
            else:
                if not enforce and self.buffer_full():
                    break
                bitrate = self._choose_bitrate()
            self._issue(bitrate)
            self._train_left -= 1
            self._outstanding += 1
        if self._outstanding == 0:
            self._pause()

    # expanded ranges -----------------------------------------------------------

    def _next_range(self) -> None:
        if self.stopped or self._paused or self._connecting:
            return
        if self.buffer_full():
            self._pause()
            return
        bitrate = self._choose_bitrate()
        self._issue_range(bitrate)

    def _issue_range(self, bitrate: float) -> SegmentRequest:
        seg = self._segment_size(bitrate)
        chunk = self._chunk_size() or seg
        rng = expanded_range_request(chunk, self.next_segment * seg, seg)
        self._range_bitrate = bitrate
        self._range_left = rng.n_segments
        return self._issue(bitrate, rng.n_segments)

    def _range_segment_done(self, entry: _Pending) -> None:
        self._range_left -= 1
        if self._range_left <= 0:
            self._next_range()
            return
        bitrate = self._choose_bitrate()
        if bitrate != self._range_bitrate:
            self.cancel_and_reissue(bitrate)

    def cancel_and_reissue(self, new_bitrate: float) -> Optional[TcpConnection]:
        """Abort the in-flight range, reconnect, and request the rest of the
        range at ``new_bitrate``. No-op when nothing is in flight."""
        if not self._pending or self.conn is None:
            return None
        conn = self.conn
        req = self._pending[0].request
        req.canceled = True
        seg_start = self._pending[0].end - self._pending[0].size
        partial = max(0, conn.rcv_nxt - seg_start)
        self.wasted_bytes += partial
        conn.close()
        self.cancels += 1
        self.next_segment = self._pending[0].index
        self._open_connection()
        self._connecting = True
        # new handshake costs one round trip before the request can go out
        self.sim.schedule(self.sim.now + 2 * self.uplink_us, self._reissue, new_bitrate)
        return self.conn

    def _reissue(self, bitrate: float) -> None:
        self._connecting = False
        if self.stopped:
            return
        self.bitrate = bitrate
        self.player.bitrate = bitrate
        if self.buffer_full():
            self._pause()
            return
        self._issue_range(bitrate)

    @property
    def total_wasted(self) -> int:
        return self.wasted_bytes + sum(c.wasted_bytes for c in self.connections)
