import pytest
from hypothesis import given
from hypothesis import strategies as st

from sprintsim.player import (
    BitrateLadder,
    EstimatorState,
    HuangAbr,
    PeriodicAbr,
    RttProber,
    VideoBufferState,
    bw_fraction_select,
    fixed_select,
    huang_abr_select,
    playback_tick,
    probe_rtt,
    segment_bytes,
    update_bandwidth,
)
from sprintsim.sim import MSS, BottleneckLink, BottleneckQueue, Packet, Simulator

LADDER = BitrateLadder.default()


def kbps(*xs):
    return [x * 1000.0 for x in xs]


def test_ladder_validation():
    with pytest.raises(ValueError):
        BitrateLadder([])
    with pytest.raises(ValueError):
        BitrateLadder([400, 200])
    assert LADDER.lowest == 200_000 and LADDER.highest == 3_000_000


def test_segment_bytes():
    assert segment_bytes(1_000_000) == 500_000
    assert segment_bytes(250_000) == 125_000


# ABR -------------------------------------------------------------------------


def test_huang_steps_up_after_ten_seconds_of_growth():
    abr = HuangAbr(LADDER)
    assert abr.select(20, 900_000) == 900_000
    assert abr.select(30, 900_000) == 1_200_000


def test_huang_holds_on_small_changes():
    abr = HuangAbr(LADDER)
    abr.select(20, 900_000)
    assert huang_abr_select(abr, 29.9, 900_000) == 900_000
    assert huang_abr_select(abr, 10.1, 900_000) == 900_000


def test_huang_skips_the_previous_bitrate():
    abr = HuangAbr(LADDER)
    abr.select(20, 900_000)
    cur = abr.select(30, 900_000)
    assert cur == 1_200_000
    # falling back would revisit 900; skip past it
    assert abr.select(20, cur) == 600_000


def test_huang_holds_when_nothing_lies_beyond_the_previous_rate():
    ladder = BitrateLadder(kbps(200, 400))
    abr = HuangAbr(ladder)
    abr.select(20, 200_000)
    assert abr.select(30, 200_000) == 400_000
    assert abr.select(20, 400_000) == 400_000


@given(st.lists(st.floats(0, 120), min_size=2, max_size=200))
def test_huang_never_oscillates(levels):
    abr = HuangAbr(LADDER)
    cur = 900_000.0
    switches = [cur]
    for lv in levels:
        nxt = abr.select(lv, cur)
        if nxt != cur:
            switches.append(nxt)
            cur = nxt
    for a, b, c in zip(switches, switches[1:], switches[2:]):
        assert a != c


def test_bw_fraction_examples():
    assert bw_fraction_select(250_000, 1.0, LADDER) == 2_000_000
    assert bw_fraction_select(250_000, 0.8, LADDER) == 1_500_000
    assert bw_fraction_select(1_000, 0.8, LADDER) == 200_000
    assert bw_fraction_select(None, 0.8, LADDER) == 200_000
    with pytest.raises(ValueError):
        bw_fraction_select(250_000, 1.5, LADDER)


def test_fixed_select():
    assert fixed_select(1_500_000, LADDER) == 1_500_000
    with pytest.raises(ValueError):
        fixed_select(1_234_000, LADDER)


def test_periodic_cycles():
    abr = PeriodicAbr(LADDER, 30, kbps(1200, 2000))
    assert [abr.select(0, 0, None, t) for t in (0, 29.9, 30, 61)] == kbps(1200, 1200, 2000, 1200)


# estimator -------------------------------------------------------------------


def test_first_sample_seeds_estimate():
    est = update_bandwidth(EstimatorState(), 200_000, 1.0)
    assert est.bw_ewma == 200_000


def test_small_requests_are_downweighted():
    est = update_bandwidth(EstimatorState(), 250_000, 1.0)
    update_bandwidth(est, 10_000, 0.001)
    moved = est.bw_ewma - 250_000
    assert moved == pytest.approx(0.3 * (10_000 / 250_000) * (10_000_000 - 250_000))


@given(st.floats(1e3, 1e7), st.integers(1, 50))
def test_ewma_fixed_point(sample, n):
    est = EstimatorState()
    for _ in range(n):
        update_bandwidth(est, sample, 1.0)
    assert est.bw_ewma == pytest.approx(sample)


def test_zero_duration_rejected():
    with pytest.raises(ValueError):
        update_bandwidth(EstimatorState(), 1000, 0)


# buffer ------------------------------------------------------------------------


def _playing(level):
    b = VideoBufferState()
    b.add(max(level, 4))
    b.level = level
    return b


def test_tick_drains_one_second_per_second():
    b, events = playback_tick(_playing(10), 1)
    assert b.level == 9 and events == []


def test_tick_to_empty_stalls():
    b, events = playback_tick(_playing(0.5), 1)
    assert b.level == 0 and events == ["stall"]
    assert b.rebuffer_count == 1 and b.rebuffer_time == pytest.approx(0.5)
    playback_tick(b, 2)
    assert b.rebuffer_time == pytest.approx(2.5)
    assert b.add(4) == ["resume"]
    assert b.playing


def test_tick_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        playback_tick(VideoBufferState(), 0)


def test_watermark_below_target():
    assert VideoBufferState(target=120).watermark == 112


@given(st.lists(st.tuples(st.floats(0.01, 5), st.sampled_from([0, 0, 4])), max_size=300))
def test_wall_time_is_play_plus_stall(steps):
    b = VideoBufferState()
    wall = 0.0
    for dt, seg in steps:
        if seg:
            b.add(seg)
        b.tick(dt)
        wall += dt
        assert b.level >= 0
    assert b.play_time + b.rebuffer_time + b.startup_time == pytest.approx(wall)


# RTT probe -----------------------------------------------------------------------


def _probe_setup(cap=256_000):
    sim = Simulator()
    link = BottleneckLink(sim, 375_000, 0.01, BottleneckQueue(cap))
    est = EstimatorState()
    return sim, link, RttProber(sim, link, 0.01, est), est


def test_probe_on_idle_path():
    sim, link, prober, est = _probe_setup()
    probe_rtt(prober)
    sim.run_until(1_000_000)
    # 20ms of propagation plus 10 bytes at 375 kB/s
    assert est.srtt_app == pytest.approx(0.02 + 10 / 375_000, abs=2e-6)


def test_probe_waits_behind_a_full_queue():
    sim, link, prober, est = _probe_setup()
    while link.send(Packet("bulk", MSS)):
        pass
    probe_rtt(prober)
    sim.run_until(2_000_000)
    assert est.srtt_app == pytest.approx(0.02 + 0.683, abs=0.01)


def test_probe_cadence():
    sim, link, prober, est = _probe_setup()
    prober.start(0)
    sim.run_until(10_000_000)
    assert est.rtt_samples == 10
