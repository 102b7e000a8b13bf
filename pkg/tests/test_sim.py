import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprintsim.sim import (
    MSS,
    BottleneckLink,
    BottleneckQueue,
    Packet,
    SimulationError,
    Simulator,
    queue_drain_time,
)


def test_event_fires_at_its_time():
    sim = Simulator()
    seen = []
    sim.schedule(5_000_000, lambda: seen.append(sim.now))
    sim.run_until(10_000_000)
    assert seen == [5_000_000]


def test_ties_fire_in_insertion_order():
    sim = Simulator()
    seen = []
    for tag in "abc":
        sim.schedule(5_000_000, seen.append, tag)
    sim.run_until(5_000_000)
    assert seen == ["a", "b", "c"]


def test_scheduling_in_the_past_is_rejected():
    sim = Simulator()
    sim.run_until(100)
    with pytest.raises(SimulationError):
        sim.schedule(99, lambda: None)
    with pytest.raises(SimulationError):
        sim.run_until(50)


def test_empty_run_returns_t_end():
    sim = Simulator()
    assert sim.run_until(7_000_000) == 7_000_000


def test_self_rescheduling_tick_counts():
    sim = Simulator()
    fired = []

    def tick():
        fired.append(sim.now)
        sim.schedule(sim.now + 1_000_000, tick)

    sim.schedule(1_000_000, tick)
    sim.run_until(10_000_000)
    assert len(fired) == 10


def test_cancelled_event_does_not_fire():
    sim = Simulator()
    seen = []
    eid = sim.schedule(10, seen.append, 1)
    sim.schedule(20, seen.append, 2)
    sim.cancel(eid)
    sim.run_until(100)
    assert seen == [2]


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60))
def test_events_run_in_time_then_sequence_order(times):
    sim = Simulator()
    seen = []
    for i, t in enumerate(times):
        sim.schedule(t, seen.append, (t, i))
    sim.run_until(10_000)
    assert seen == sorted(seen)


# drop-tail queue ------------------------------------------------------------


def _pkt(size=MSS, flow="f"):
    return Packet(flow, size)


def test_enqueue_into_empty_queue():
    q = BottleneckQueue(256_000)
    assert q.enqueue(_pkt())
    assert q.occupancy == 1460


def test_enqueue_over_capacity_drops():
    q = BottleneckQueue(256_000)
    q.occupancy = 255_000
    assert not q.enqueue(_pkt())
    assert q.drops == {"f": 1}
    assert q.dropped_bytes == {"f": 1460}


def test_enqueue_exactly_to_capacity():
    q = BottleneckQueue(256_000)
    q.occupancy = 254_540
    assert q.enqueue(_pkt())
    assert q.occupancy == 256_000


@given(st.lists(st.tuples(st.integers(1, MSS), st.booleans()), max_size=200), st.integers(0, 50_000))
def test_queue_occupancy_is_sum_of_queued_sizes(ops, cap):
    q = BottleneckQueue(cap)
    for size, pop in ops:
        if pop and len(q):
            q.dequeue()
        else:
            before = q.occupancy
            ok = q.enqueue(_pkt(size))
            assert ok == (before + size <= cap)
        assert 0 <= q.occupancy <= cap
        assert q.occupancy == sum(p.size for _, p in q._fifo)


def test_fifo_order_preserved():
    q = BottleneckQueue(10 * MSS)
    for i in range(5):
        q.enqueue(Packet("f", MSS, seq=i * MSS))
    assert [q.dequeue().seq for _ in range(5)] == [i * MSS for i in range(5)]


def test_drain_time_examples():
    assert queue_drain_time(256_000, 375_000) == pytest.approx(0.6827, abs=1e-4)
    assert queue_drain_time(0, 375_000) == 0
    assert queue_drain_time(31_000, 312_500) == pytest.approx(0.0992)
    with pytest.raises(ValueError):
        queue_drain_time(1, 0)


def test_packets_validate():
    with pytest.raises(ValueError):
        Packet("f", MSS + 1)
    with pytest.raises(ValueError):
        Packet("f", 10, seq=-1)
    assert Packet("f", 0, direction="ack").size == 0


# link ----------------------------------------------------------------------


def _link(bw=375_000, delay=0.01, cap=256_000):
    sim = Simulator()
    return sim, BottleneckLink(sim, bw, delay, BottleneckQueue(cap))


def test_single_packet_delay_is_serialization_plus_propagation():
    sim, link = _link()
    got = []
    link.send(Packet("f", MSS, sink=lambda p: got.append(sim.now)))
    sim.run_until(1_000_000)
    # 1460 / 375000 s = 3893.3us, rounded up, plus 10ms
    assert got == [3894 + 10_000]


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 200_000), st.integers(1, MSS)), min_size=1, max_size=300),
    st.integers(0, 40_000),
)
def test_link_conserves_bytes_and_respects_rate(arrivals, cap):
    sim, link = _link(cap=cap)
    delivered = []
    dropped = 0
    sent = 0

    def offer(size):
        nonlocal dropped, sent
        sent += size
        if not link.send(Packet("f", size, sink=lambda p: delivered.append((sim.now, p.size)))):
            dropped += size

    for t, size in sorted(arrivals):
        sim.schedule(t, offer, size)
    sim.run_until(10_000_000)
    assert sum(s for _, s in delivered) == sent - dropped
    # bytes leaving the link in any window never beat the line rate by more than a packet
    times = [t for t, _ in delivered]
    for i in range(len(delivered)):
        for j in range(i, min(len(delivered), i + 40)):
            span = (times[j] - times[i]) / 1e6
            nbytes = sum(s for _, s in delivered[i + 1 : j + 1])
            assert nbytes <= 375_000 * span + MSS


def test_delivered_between_uses_whole_bins():
    sim, link = _link()
    for _ in range(10):
        link.send(Packet("f", MSS))
    sim.run_until(1_000_000)
    assert link.delivered_between("f", 0, 1_000_000) == 10 * MSS
    assert link.delivered_between("f", 500_000, 1_000_000) == 0
