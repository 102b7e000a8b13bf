"""Discrete-event engine and the single-bottleneck dumbbell.

Time is kept in integer microseconds so that event ordering never depends on
float rounding. Events fire in (time, sequence number) order.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Optional

US_PER_S = 1_000_000
MSS = 1460


def seconds_to_us(t: float) -> int:
    return int(round(t * US_PER_S))


def us_to_seconds(t: int) -> float:
    return t / US_PER_S


class SimulationError(RuntimeError):
    """Raised when a caller breaks an engine contract."""


class Simulator:
    """Heap-based event loop.

    ``schedule`` returns an integer event id that can be passed to ``cancel``.
    Cancellation is lazy: the entry stays on the heap and is skipped on pop.
    """

    __slots__ = ("now", "_heap", "_seq", "_cancelled", "_stopped")

    def __init__(self) -> None:
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self._stopped = False

    def schedule(self, time_us: int, fn: Callable[..., Any], *args: Any) -> int:
        if time_us < self.now:
            raise SimulationError(
                f"cannot schedule at t={time_us}us, current time is {self.now}us"
            )
        self._seq += 1
        heapq.heappush(self._heap, (time_us, self._seq, fn, args))
        return self._seq

    def schedule_in(self, delay_us: int, fn: Callable[..., Any], *args: Any) -> int:
        return self.schedule(self.now + delay_us, fn, *args)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def stop(self) -> None:
        """Ask ``run_until`` to return after the current event."""
        self._stopped = True

    @property
    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise SimulationError(f"t_end={t_end}us is before current time {self.now}us")
        heap = self._heap
        cancelled = self._cancelled
        pop = heapq.heappop
        self._stopped = False
        while heap and heap[0][0] <= t_end:
            t, seq, fn, args = pop(heap)
            if cancelled and seq in cancelled:
                cancelled.discard(seq)
                continue
            self.now = t
            fn(*args)
            if self._stopped:
                return self.now
        self.now = t_end
        return t_end


class Packet:
    """A data packet (payload ``size`` bytes) or a zero-payload ACK."""

    __slots__ = ("flow_id", "size", "seq", "direction", "sent_at", "sink", "meta")

    def __init__(
        self,
        flow_id: Any,
        size: int,
        seq: int = 0,
        direction: str = "data",
        sent_at: int = 0,
        sink: Optional[Callable[["Packet"], None]] = None,
        meta: Any = None,
    ) -> None:
        if seq < 0:
            raise ValueError("packet seq must be nonnegative")
        if direction == "data" and size > MSS:
            raise ValueError(f"data packet of {size} bytes exceeds MSS {MSS}")
        self.flow_id = flow_id
        self.size = size
        self.seq = seq
        self.direction = direction
        self.sent_at = sent_at
        self.sink = sink
        self.meta = meta


def queue_drain_time(occupancy: float, bandwidth: float) -> float:
    """Seconds needed to empty ``occupancy`` bytes at ``bandwidth`` bytes/s."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return occupancy / bandwidth


class BottleneckQueue:
    """Byte-bounded drop-tail FIFO.

    Only packets waiting for the link count towards occupancy; the packet
    being serialized has already left the queue.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 0:
            raise ValueError("queue capacity must be nonnegative")
        self.capacity = capacity
        self.occupancy = 0
        self._fifo: deque = deque()
        self.per_flow: dict[Any, int] = {}
        self.drops: dict[Any, int] = {}
        self.dropped_bytes: dict[Any, int] = {}

    def __len__(self) -> int:
        return len(self._fifo)

    def enqueue(self, p: Packet, tag: Any = None) -> bool:
        if self.occupancy + p.size > self.capacity:
            self.drops[p.flow_id] = self.drops.get(p.flow_id, 0) + 1
            self.dropped_bytes[p.flow_id] = self.dropped_bytes.get(p.flow_id, 0) + p.size
            return False
        self._fifo.append((tag, p))
        self.occupancy += p.size
        self.per_flow[p.flow_id] = self.per_flow.get(p.flow_id, 0) + p.size
        return True

    def peek_tag(self) -> Any:
        return self._fifo[0][0]

    def dequeue(self) -> Packet:
        _, p = self._fifo.popleft()
        self.occupancy -= p.size
        self.per_flow[p.flow_id] -= p.size
        return p

    def queued_bytes(self, flow_id: Any) -> int:
        return self.per_flow.get(flow_id, 0)


@dataclass
class LinkStats:
    bytes_out: int = 0
    packets_out: int = 0


class BottleneckLink:
    """Fixed-rate link with a drop-tail queue and one-way propagation delay.

    Departure times are computed when a packet is admitted, so the link needs
    no "transmission finished" events: a waiting packet leaves the queue once
    the clock passes its service start time. Within a busy period the finish
    time of the k-th packet is ``start + ceil(bytes_so_far / bandwidth)``,
    which never runs faster than the nominal rate and does not accumulate
    rounding drift.
    """

    def __init__(
        self,
        sim: Simulator,
        bandwidth: float,
        propagation_delay: float,
        queue: BottleneckQueue,
        bin_us: int = 100_000,
    ) -> None:
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.sim = sim
        self.bandwidth = float(bandwidth)
        self.propagation_delay = propagation_delay
        self.prop_us = seconds_to_us(propagation_delay)
        self.queue = queue
        self.stats = LinkStats()
        self._free_at = 0
        self._busy_start = 0
        self._busy_bytes = 0
        self._us_per_byte = US_PER_S / self.bandwidth
        # bytes delivered to receivers, per flow, in bins of bin_us
        self.bin_us = bin_us
        self.delivered_bins: dict[Any, list[int]] = {}
        self.delivered: dict[Any, int] = {}
        self.sent: dict[Any, int] = {}

    def serialization_time(self, size: int) -> float:
        return size / self.bandwidth

    def _advance(self, now: int) -> None:
        q = self.queue
        fifo = q._fifo
        while fifo and fifo[0][0] <= now:
            q.dequeue()

    def queued_bytes(self, flow_id: Any) -> int:
        self._advance(self.sim.now)
        return self.queue.queued_bytes(flow_id)

    def occupancy(self) -> int:
        self._advance(self.sim.now)
        return self.queue.occupancy

    def send(self, p: Packet) -> bool:
        """Offer a packet to the bottleneck. Returns False if it was dropped."""
        sim = self.sim
        now = sim.now
        self._advance(now)
        self.sent[p.flow_id] = self.sent.get(p.flow_id, 0) + p.size
        if self._free_at <= now:
            self._busy_start = now
            self._busy_bytes = 0
            start = now
        else:
            start = self._free_at
            if not self.queue.enqueue(p, start):
                return False
        self._busy_bytes += p.size
        finish = self._busy_start + math.ceil(self._busy_bytes * self._us_per_byte - 1e-6)
        if finish <= start:
            finish = start + 1
        self._free_at = finish
        self.stats.bytes_out += p.size
        self.stats.packets_out += 1
        sim.schedule(finish + self.prop_us, self._deliver, p)
        return True

    def _deliver(self, p: Packet) -> None:
        fid = p.flow_id
        self.delivered[fid] = self.delivered.get(fid, 0) + p.size
        bins = self.delivered_bins.get(fid)
        if bins is None:
            bins = self.delivered_bins[fid] = []
        idx = self.sim.now // self.bin_us
        if idx >= len(bins):
            bins.extend([0] * (idx + 1 - len(bins)))
        bins[idx] += p.size
        if p.sink is not None:
            p.sink(p)

    def delivered_between(self, flow_id: Any, t0_us: int, t1_us: int) -> int:
        """Bytes of ``flow_id`` delivered in whole bins covering [t0, t1)."""
        bins = self.delivered_bins.get(flow_id, [])
        lo = t0_us // self.bin_us
        hi = t1_us // self.bin_us
        return sum(bins[lo:hi])
