import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sprintsim.chunking import (
    bytes_additive,
    bytes_slow_start,
    chunk_plan,
    get_chunk_size,
    predict_efficiency,
    predict_throughput,
    rts_sst_to_bdp,
    rts_to_sst,
)

MSS = 1460


def oracle_chunk(bandwidth, rtt, eps, mss=MSS):
    """Independent evaluation: exact fractions, slow-start rounds found by
    counting doublings instead of taking a logarithm."""
    bdp = Fraction(bandwidth) * Fraction(rtt)
    sst = bdp * Fraction(3, 4)
    r1 = 1
    while 10 * mss * 2 ** (r1 - 1) < sst:
        r1 += 1
    r2 = (bdp - sst) // mss + 1
    return (1 - Fraction(eps)) * Fraction(r1 + r2) / Fraction(eps) * bdp


# frozen from hand evaluation
# 2Mbps/100ms: bdp 25,000; sst 18,750; r1 2; r2 floor(6250/1460)+1 = 5; 0.9 * 70 * 25,000
CHUNK_2MBPS_100MS = 1_575_000
# 400kbps/20ms: bdp 1,000; sst 750 (below the initial window); r1 1; r2 1; 0.9 * 20 * 1,000
CHUNK_400KBPS_20MS = 18_000


def test_rts_to_sst_examples():
    assert rts_to_sst(18_750) == 2
    assert rts_to_sst(10 * MSS) == 1
    assert rts_to_sst(1_000) == 1
    with pytest.raises(ValueError):
        rts_to_sst(0)


def test_bytes_slow_start_examples():
    assert bytes_slow_start(2) == 43_800
    assert bytes_slow_start(1) == 14_600


def test_rts_sst_to_bdp_examples():
    assert rts_sst_to_bdp(18_750, 25_000) == 5
    assert rts_sst_to_bdp(20_000, 20_000) == 1
    assert rts_sst_to_bdp(20_000, 21_460) == 2
    with pytest.raises(ValueError):
        rts_sst_to_bdp(25_000, 18_750)


def test_bytes_additive_examples():
    assert bytes_additive(5, 18_750) == 99_590
    assert bytes_additive(1, 18_750) == bytes_additive(1, 18_750, corrected=True) == 18_750
    assert bytes_additive(5, 18_750, corrected=True) == 108_350


def test_predict_efficiency_worked_example():
    p = predict_efficiency(1_575_000, 25_000, 18_750)
    assert (p.r1, p.r2, p.r3) == (2, 5, 58)
    assert (p.b1, p.b2) == (43_800, 99_590)
    assert p.rounds == 65
    assert p.efficiency == pytest.approx(0.969, abs=5e-4)
    assert not p.low_confidence


def test_predict_efficiency_rejects_bad_input():
    with pytest.raises(ValueError):
        predict_efficiency(0, 25_000, 18_750)
    with pytest.raises(ValueError):
        predict_efficiency(1000, 0, 18_750)


def test_sst_above_bdp_is_clamped():
    p = predict_efficiency(1_000_000, 25_000, 60_000)
    assert p.sst == 25_000
    assert p.r2 == 1


def test_small_chunk_is_low_confidence():
    p = predict_efficiency(100_000, 25_000, 18_750)
    assert p.low_confidence and p.r3 == 0
    # 14,600 + 29,200 covers 43,800 after two rounds; the rest needs three of additive increase
    assert (p.r1, p.r2) == (2, 3)


def test_chunk_ending_in_slow_start():
    p = predict_efficiency(20_000, 250_000, 187_500)
    assert p.low_confidence
    assert (p.r1, p.r2) == (2, 0)


def test_get_chunk_size_examples():
    assert get_chunk_size(250_000, 0.1, 0.1) == CHUNK_2MBPS_100MS
    assert get_chunk_size(50_000, 0.02, 0.1) == CHUNK_400KBPS_20MS
    assert oracle_chunk(250_000, Fraction(1, 10), Fraction(1, 10)) == CHUNK_2MBPS_100MS
    assert oracle_chunk(50_000, Fraction(1, 50), Fraction(1, 10)) == CHUNK_400KBPS_20MS


def test_halving_eps_roughly_doubles_chunk():
    a = get_chunk_size(250_000, 0.1, 0.1)
    b = get_chunk_size(250_000, 0.1, 0.05)
    assert b / a == pytest.approx(0.95 * 2 / 0.9, rel=1e-9)


def test_eps_outside_unit_interval_rejected():
    for eps in (0, 1, 1.5, -0.1):
        with pytest.raises(ValueError):
            get_chunk_size(250_000, 0.1, eps)
    with pytest.raises(ValueError):
        get_chunk_size(0, 0.1, 0.1)


def test_chunk_plan_carries_epsilon():
    plan = chunk_plan(250_000, 0.1, 0.1)
    assert plan.chunk_size == CHUNK_2MBPS_100MS
    assert plan.epsilon == 0.1
    assert plan.efficiency >= 0.9


def test_predict_throughput_defaults_sst_to_three_quarters_bdp():
    plan, tput = predict_throughput(1_575_000, 250_000, 0.1)
    assert plan.sst == 18_750
    assert tput == pytest.approx(plan.efficiency * 250_000)


bandwidths = st.integers(62_500, 1_250_000)  # 0.5 to 10 Mbps in bytes/s
rtts = st.integers(20, 500).map(lambda ms: ms / 1000)
epsilons = st.sampled_from([0.05, 0.1, 0.2])


@given(bandwidths, rtts, epsilons)
def test_chunk_size_matches_oracle(bw, rtt, eps):
    expected = oracle_chunk(bw, Fraction(rtt), Fraction(eps))
    assert abs(get_chunk_size(bw, rtt, eps) - expected) <= 1


@given(bandwidths, rtts, epsilons)
def test_eps_guarantee(bw, rtt, eps):
    bdp = bw * rtt
    p = predict_efficiency(get_chunk_size(bw, rtt, eps), bdp, 0.75 * bdp)
    assert p.efficiency >= 1 - eps


@given(bandwidths, rtts, rtts, epsilons)
def test_chunk_size_nondecreasing_in_bdp(bw, rtt_a, rtt_b, eps):
    lo, hi = sorted((rtt_a, rtt_b))
    assert get_chunk_size(bw, lo, eps) <= get_chunk_size(bw, hi, eps)


def _boundary_efficiencies(bw, rtt, k, extra):
    # r3 is a ceiling, so E saws up and down inside a round; compare chunks
    # that end just inside round boundaries
    bdp = bw * rtt
    sst = 0.75 * bdp
    base = predict_efficiency(10**12, bdp, sst)
    start = base.b1 + base.b2
    prefix = start / ((base.r1 + base.r2) * bdp)
    e1 = predict_efficiency(start + (k + 1) * bdp - 0.5, bdp, sst).efficiency
    e2 = predict_efficiency(start + (k + extra + 1) * bdp - 0.5, bdp, sst).efficiency
    return prefix, e1, e2


@given(bandwidths, rtts, st.integers(0, 400), st.integers(1, 400))
def test_efficiency_nondecreasing_across_round_boundaries(bw, rtt, k, extra):
    prefix, e1, e2 = _boundary_efficiencies(bw, rtt, k, extra)
    if prefix <= 1:
        assert e1 <= e2 + 1e-12
    else:
        # the first two phases already beat the BDP (paths so short that the
        # initial window exceeds it); E then falls towards 1 from above
        assert e1 >= e2 - 1e-12 and e2 >= 1


@given(bandwidths, rtts)
def test_efficiency_tends_to_one(bw, rtt):
    bdp = bw * rtt
    p = predict_efficiency(1e6 * bdp, bdp, 0.75 * bdp)
    assert p.efficiency == pytest.approx(1.0, abs=1e-4)


@given(st.floats(1e3, 1e8), st.floats(100, 1e7), st.floats(100, 1e7))
def test_plan_is_pure_and_consistent(size, bdp, sst):
    a = predict_efficiency(size, bdp, sst)
    b = predict_efficiency(size, bdp, sst)
    assert a == b
    assert a.r1 >= 1 and a.r3 >= 0
    assert a.b1 == 10 * MSS * (2 ** rts_to_sst(min(sst, bdp)) - 1)
    assert a.efficiency == pytest.approx(size / (a.rounds * bdp))
    assert math.isfinite(a.efficiency)
