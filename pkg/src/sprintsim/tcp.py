"""Reno-style AIMD congestion control and a simulated TCP connection.

The ``TcpFlowState`` helpers (``on_ack``, ``on_loss``, ``on_idle_restart`` ...)
are small functions over the window state so they can be tested without an
event loop. ``TcpConnection`` wires them to a :class:`~sprintsim.sim.BottleneckLink`.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .sim import MSS, US_PER_S, BottleneckLink, Packet, Simulator, seconds_to_us

INITIAL_WINDOW_PACKETS = 10
MIN_RTO = 0.2
MAX_RTO = 60.0
INITIAL_RTO = 1.0
DUPTHRESH = 3
NO_SSTHRESH = 1 << 40


class ProtocolError(ValueError):
    """Accounting that no real TCP sender could produce."""


@dataclass
class TcpFlowState:
    mss: int = MSS
    initial_cwnd: int = INITIAL_WINDOW_PACKETS * MSS
    cwnd: int = 0
    ssthresh: int = NO_SSTHRESH
    in_flight: int = 0
    srtt: float = 0.0
    rttvar: float = 0.0
    has_rtt: bool = False
    last_send_time: Optional[int] = None  # microseconds
    max_cwnd: int = 0
    restarts: int = 0
    _ca_bytes: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if self.cwnd == 0:
            self.cwnd = self.initial_cwnd
        self.max_cwnd = max(self.max_cwnd, self.cwnd)

    @property
    def phase(self) -> str:
        return "slow_start" if self.cwnd < self.ssthresh else "congestion_avoidance"


def rto(s: TcpFlowState) -> float:
    """srtt plus four deviations, where the deviation term is never less than
    ``MIN_RTO`` (the way Linux floors it), capped at ``MAX_RTO``."""
    if not s.has_rtt:
        return INITIAL_RTO
    return min(MAX_RTO, s.srtt + max(MIN_RTO, 4 * s.rttvar))


def can_send(s: TcpFlowState, pending: Optional[int] = None) -> int:
    """Bytes the window admits right now.

    Only whole MSS packets are admitted, except that a final short packet of
    ``pending`` bytes (< MSS) goes out if it fits.
    """
    window = max(0, s.cwnd - s.in_flight)
    allowed = (window // s.mss) * s.mss
    if allowed == 0 and pending is not None and pending < s.mss and pending <= window:
        return pending
    return allowed


def update_rtt(s: TcpFlowState, sample: float) -> TcpFlowState:
    if not s.has_rtt:
        s.srtt = sample
        s.rttvar = sample / 2
        s.has_rtt = True
    else:
        s.rttvar = 0.75 * s.rttvar + 0.25 * abs(s.srtt - sample)
        s.srtt = 0.875 * s.srtt + 0.125 * sample
    return s


def grow_window(s: TcpFlowState, acked: int) -> TcpFlowState:
    """Slow start adds the acked bytes; congestion avoidance adds one MSS per
    cwnd worth of acked bytes (byte counting, so per-packet and per-window
    calls agree)."""
    if s.cwnd < s.ssthresh:
        s.cwnd += acked
    else:
        s._ca_bytes += acked
        if s._ca_bytes >= s.cwnd:
            s._ca_bytes -= s.cwnd
            s.cwnd += s.mss
    if s.cwnd > s.max_cwnd:
        s.max_cwnd = s.cwnd
    return s


def on_ack(
    s: TcpFlowState, acked: int, rtt_sample: Optional[float] = None, grow: bool = True
) -> TcpFlowState:
    if acked <= 0:
        raise ValueError("acked must be positive")
    if acked > s.in_flight:
        raise ProtocolError(f"acked {acked} bytes but only {s.in_flight} in flight")
    s.in_flight -= acked
    if grow:
        grow_window(s, acked)
    if rtt_sample is not None:
        update_rtt(s, rtt_sample)
    return s


def on_loss(s: TcpFlowState) -> TcpFlowState:
    half = max(s.cwnd // 2, s.mss)
    s.ssthresh = half
    s.cwnd = half
    s._ca_bytes = 0
    return s


def on_timeout(s: TcpFlowState) -> TcpFlowState:
    s.ssthresh = max(s.cwnd // 2, 2 * s.mss)
    s.cwnd = s.mss
    s._ca_bytes = 0
    return s


def on_idle_restart(s: TcpFlowState, idle: float) -> TcpFlowState:
    """Collapse cwnd after an idle period of at least one RTO.

    ssthresh becomes 3/4 of the largest cwnd reached since the previous
    restart. A flow that never sent anything is left alone.
    """
    if s.last_send_time is None or idle < rto(s):
        return s
    s.ssthresh = max(s.mss, (3 * s.max_cwnd) // 4)
    s.cwnd = s.initial_cwnd
    s.max_cwnd = s.cwnd
    s._ca_bytes = 0
    s.restarts += 1
    return s


def saved_ssthresh(
    s: TcpFlowState, in_recovery: bool = False, previous: Optional[int] = None
) -> Optional[int]:
    """ssthresh a host remembers for the peer when a connection closes.

    Follows the Linux per-destination metrics cache: a connection in steady
    congestion avoidance stores max(cwnd/2, ssthresh); one still in its first
    slow start can only raise an existing entry to cwnd/2; otherwise the
    entry can only be raised to the current ssthresh.
    """
    if s.ssthresh >= NO_SSTHRESH:
        half = s.cwnd // 2
        if previous is not None and half > previous:
            return half
        return previous
    if s.cwnd >= s.ssthresh and not in_recovery:
        return max(s.cwnd // 2, s.ssthresh)
    if previous is not None and s.ssthresh > previous:
        return s.ssthresh
    return previous


def instantaneous_throughput(s: TcpFlowState) -> float:
    if s.srtt <= 0:
        raise ValueError("srtt must be positive")
    return s.cwnd / s.srtt


@dataclass(frozen=True)
class FairBdp:
    fair_bandwidth: float  # bytes/s
    rtt: float  # seconds, including queueing

    @property
    def value(self) -> float:
        return self.fair_bandwidth * self.rtt


def fair_bdp(link_bandwidth: float, n_flows: int, rtt: float) -> FairBdp:
    return FairBdp(link_bandwidth / max(1, n_flows), rtt)


class _Tx:
    """One transmission of a byte range (first send or retransmission)."""

    __slots__ = ("order", "seq", "length", "sent_at", "arrived", "lost")

    def __init__(self, order: int, seq: int, length: int, sent_at: int) -> None:
        self.order = order
        self.seq = seq
        self.length = length
        self.sent_at = sent_at
        self.arrived = False
        self.lost = False


class TcpConnection:
    """Server-to-client byte stream over the bottleneck.

    The server side sends whatever the application has pushed (``push``);
    the client side reassembles in order and calls ``on_deliver(conn,
    rcv_nxt)`` whenever the in-order edge advances. ACKs return over a
    delay-only path.

    Each ACK echoes the transmission that triggered it, so the sender knows
    which transmissions reached the receiver. A transmission is declared lost
    once one sent ``DUPTHRESH`` transmissions later has been acknowledged (the
    forward-acknowledgement reading of triple duplicate ACKs). The window is
    halved at most once per window of data; timeouts fall back to one MSS.
    """

    def __init__(
        self,
        sim: Simulator,
        link: BottleneckLink,
        flow_id: Any,
        ack_delay: float,
        mss: int = MSS,
        initial_cwnd: Optional[int] = None,
        on_deliver: Optional[Callable[["TcpConnection", int], None]] = None,
        send_jitter: float = 0.0,
        rng: Optional[random.Random] = None,
        initial_ssthresh: Optional[int] = None,
    ) -> None:
        self.sim = sim
        self.link = link
        self.flow_id = flow_id
        self.ack_delay_us = seconds_to_us(ack_delay)
        self.state = TcpFlowState(
            mss=mss, initial_cwnd=initial_cwnd or INITIAL_WINDOW_PACKETS * mss
        )
        if initial_ssthresh is not None:
            self.state.ssthresh = max(2 * mss, initial_ssthresh)
        self.on_deliver = on_deliver
        self.on_ack_hook: Optional[Callable[["TcpConnection"], None]] = None
        self.open = True
        self.unbounded = False
        self.app_limit = 0
        self.snd_nxt = 0
        self.snd_una = 0
        self.rcv_nxt = 0
        self.in_recovery = False
        self.recover = 0
        self.loss_events = 0
        self.timeouts = 0
        self.bytes_sent = 0
        self.bytes_retransmitted = 0
        self.bytes_received = 0
        self.wasted_bytes = 0
        self._order = 0
        self._outstanding: deque[_Tx] = deque()
        self._retx: deque[tuple[int, int]] = deque()
        self._ooo: dict[int, int] = {}
        self._rto_deadline: Optional[int] = None
        self._rto_event: Optional[int] = None
        self._backoff = 1
        self._undo: Optional[tuple] = None
        self.spurious_timeouts = 0
        # random per-packet send overhead, order preserving, to break the
        # phase lock that deterministic drop-tail simulations fall into
        self._jitter_us = seconds_to_us(send_jitter)
        self._rng = rng if rng is not None else random.Random(0)
        self._wire_free = 0

    # application interface -------------------------------------------------

    def push(self, nbytes: int) -> None:
        """The server application hands ``nbytes`` more bytes to the socket."""
        if not self.open:
            return
        self.app_limit += nbytes
        self._try_send()

    def set_unbounded(self) -> None:
        self.unbounded = True
        self._try_send()

    def close(self) -> int:
        """Tear the connection down. Bytes still in the network will be
        counted as waste when they arrive. Returns bytes in flight."""
        self.open = False
        if self._rto_event is not None:
            self.sim.cancel(self._rto_event)
            self._rto_event = None
        return self.snd_nxt - self.snd_una

    @property
    def idle(self) -> bool:
        return self.snd_una >= self.snd_nxt and not self._retx

    @property
    def seq_in_flight(self) -> int:
        """Last byte sent minus cumulative ACK (what tcp_probe shows)."""
        return self.snd_nxt - self.snd_una

    # sender ------------------------------------------------------------------

    def _try_send(self) -> None:
        if not self.open:
            return
        s = self.state
        now = self.sim.now
        if (
            self.idle
            and s.last_send_time is not None
            and (self.unbounded or self.app_limit > self.snd_nxt)
        ):
            on_idle_restart(s, (now - s.last_send_time) / US_PER_S)
        mss = s.mss
        retx = self._retx
        while True:
            window = s.cwnd - s.in_flight
            if retx:
                seq, length = retx[0]
                if seq + length <= self.snd_una:
                    retx.popleft()
                    continue
                if window < length:
                    return
                retx.popleft()
                self.bytes_retransmitted += length
                self._transmit(seq, length)
                continue
            if self.unbounded:
                length = mss
            else:
                avail = self.app_limit - self.snd_nxt
                if avail <= 0:
                    return
                length = mss if avail >= mss else avail
            if window < length:
                return
            self._transmit(self.snd_nxt, length)

    def _transmit(self, seq: int, length: int) -> None:
        s = self.state
        now = self.sim.now
        self._order += 1
        tx = _Tx(self._order, seq, length, now)
        self._outstanding.append(tx)
        s.in_flight += length
        s.last_send_time = now
        end = seq + length
        if end > self.snd_nxt:
            self.snd_nxt = end
        self.bytes_sent += length
        if self._rto_deadline is None:
            self._arm_rto()
        pkt = Packet(self.flow_id, length, seq, "data", now, self._on_data, tx)
        if self._jitter_us:
            t = max(now, self._wire_free) + self._rng.randint(0, self._jitter_us)
            self._wire_free = t
            if t > now:
                self.sim.schedule(t, self._to_wire, pkt)
                return
        self.link.send(pkt)

    def _to_wire(self, pkt: Packet) -> None:
        if self.open:
            self.link.send(pkt)

    # receiver ----------------------------------------------------------------

    def _on_data(self, p: Packet) -> None:
        if not self.open:
            self.wasted_bytes += p.size
            return
        self.bytes_received += p.size
        seq = p.seq
        end = seq + p.size
        advanced = False
        if seq == self.rcv_nxt:
            nxt = end
            ooo = self._ooo
            while nxt in ooo:
                nxt = ooo.pop(nxt)
            self.rcv_nxt = nxt
            advanced = True
        elif seq > self.rcv_nxt:
            self._ooo[seq] = end
        self.sim.schedule(self.sim.now + self.ack_delay_us, self._on_ack, self.rcv_nxt, p.meta)
        if advanced and self.on_deliver is not None:
            self.on_deliver(self, self.rcv_nxt)

    # ACK processing ----------------------------------------------------------

    def _on_ack(self, cum_ack: int, tx: _Tx) -> None:
        if not self.open:
            return
        s = self.state
        now = self.sim.now
        update_rtt(s, (now - tx.sent_at) / US_PER_S)
        if self._undo is not None:
            if tx.sent_at < self._undo[2]:
                self._undo_timeout()
            else:
                self._undo = None
        acked = 0
        if not tx.arrived:
            tx.arrived = True
            if not tx.lost:
                acked = tx.length
        if cum_ack > self.snd_una or acked:
            if cum_ack > self.snd_una:
                self.snd_una = cum_ack
            self._backoff = 1
            if self.snd_una >= self.snd_nxt:
                self._rto_deadline = None
            else:
                self._arm_rto()
        if self.in_recovery and self.snd_una >= self.recover:
            self.in_recovery = False

        lost_any = False
        dq = self._outstanding
        horizon = tx.order - DUPTHRESH
        while dq:
            head = dq[0]
            if head.arrived or head.lost:
                dq.popleft()
                continue
            if head.seq + head.length <= self.snd_una:
                # covered by the cumulative ACK (another copy got through)
                dq.popleft()
                head.lost = True
                s.in_flight -= head.length
                continue
            if head.order > horizon:
                break
            dq.popleft()
            head.lost = True
            s.in_flight -= head.length
            if head.seq + head.length > self.snd_una:
                self._retx.append((head.seq, head.length))
                lost_any = True

        if lost_any and not self.in_recovery:
            on_loss(s)
            self.loss_events += 1
            self.in_recovery = True
            self.recover = self.snd_nxt
        if acked:
            on_ack(s, acked, None, grow=not self.in_recovery)
        if self.on_ack_hook is not None:
            self.on_ack_hook(self)
        self._try_send()

    def _undo_timeout(self) -> None:
        """The first ACK after a timeout echoed a packet sent before it: the
        timeout was spurious (a delay spike, not a loss), so put the window
        and the pipe back the way they were."""
        s = self.state
        cwnd, ssthresh, _, killed, in_recovery, recover = self._undo
        self._undo = None
        s.cwnd = max(s.cwnd, cwnd)
        s.ssthresh = ssthresh
        s._ca_bytes = 0
        revived = [t for t in killed if not t.arrived]
        for t in revived:
            t.lost = False
            s.in_flight += t.length
        self._outstanding = deque(sorted([*self._outstanding, *revived], key=lambda t: t.order))
        gone = {(t.seq, t.length) for t in revived}
        self._retx = deque(r for r in self._retx if r not in gone)
        self.in_recovery = in_recovery
        self.recover = recover
        self._backoff = 1
        self.timeouts -= 1
        self.spurious_timeouts += 1

    # retransmission timer ----------------------------------------------------

    def _arm_rto(self) -> None:
        deadline = self.sim.now + seconds_to_us(rto(self.state) * self._backoff)
        self._rto_deadline = deadline
        if self._rto_event is None:
            self._rto_event = self.sim.schedule(deadline, self._rto_fire)

    def _rto_fire(self) -> None:
        self._rto_event = None
        if not self.open or self._rto_deadline is None:
            return
        now = self.sim.now
        if now < self._rto_deadline:
            self._rto_event = self.sim.schedule(self._rto_deadline, self._rto_fire)
            return
        if self.snd_una >= self.snd_nxt:
            self._rto_deadline = None
            return
        s = self.state
        ranges = set(self._retx)
        killed = []
        for tx in self._outstanding:
            if not tx.arrived and not tx.lost:
                tx.lost = True
                s.in_flight -= tx.length
                ranges.add((tx.seq, tx.length))
                killed.append(tx)
        if self._undo is None:
            self._undo = (s.cwnd, s.ssthresh, now, killed, self.in_recovery, self.recover)
        self._outstanding.clear()
        self._retx = deque(sorted(r for r in ranges if r[0] + r[1] > self.snd_una))
        on_timeout(s)
        self.timeouts += 1
        self.in_recovery = True
        self.recover = self.snd_nxt
        self._backoff = min(self._backoff * 2, 64)
        self._arm_rto()
        self._try_send()
