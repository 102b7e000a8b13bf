"""Round-trip accounting for a chunk transfer and the adaptive chunk size.

A transfer of ``S`` bytes is split into three phases: slow start from a
10-packet window up to the slow-start threshold, additive increase from the
threshold up to the fair-share BDP, and the remainder sent at one BDP per
round trip. Efficiency is the achieved fraction of fair-share throughput::

    E = S / ((r1 + r2 + r3) * bdp)

``get_chunk_size`` picks ``S`` so that the first two phases take at most an
``eps`` fraction of the round trips, which keeps ``E`` above ``1 - eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .sim import MSS

SST_FRACTION = 0.75
INITIAL_WINDOW_PACKETS = 10


@dataclass(frozen=True)
class ChunkPlan:
    chunk_size: int
    r1: int
    r2: int
    r3: int
    b1: int
    b2: int
    bdp_f: float
    sst: float
    efficiency: float
    epsilon: Optional[float] = None
    low_confidence: bool = False

    @property
    def rounds(self) -> int:
        return self.r1 + self.r2 + self.r3


def rts_to_sst(sst: float, mss: int = MSS) -> int:
    """Round trips of slow start needed to reach ``sst`` from 10 packets."""
    if sst <= 0 or mss <= 0:
        raise ValueError("sst and mss must be positive")
    rounds = math.log2(sst / (INITIAL_WINDOW_PACKETS * mss))
    return max(1, math.ceil(rounds) + 1)


def bytes_slow_start(r1: int, mss: int = MSS) -> int:
    if r1 < 1:
        raise ValueError("r1 must be at least 1")
    return INITIAL_WINDOW_PACKETS * mss * (2**r1 - 1)


def rts_sst_to_bdp(sst: float, bdp_f: float, mss: int = MSS) -> int:
    """Round trips of additive increase from ``sst`` to ``bdp_f``."""
    if bdp_f < sst:
        raise ValueError(f"bdp_f ({bdp_f}) is below sst ({sst}); clamp sst first")
    return math.floor((bdp_f - sst) / mss) + 1


def bytes_additive(r2: int, sst: float, mss: int = MSS, corrected: bool = False) -> float:
    """Bytes sent during additive increase.

    The default is ``r2*sst + mss*(r2-1)``. With ``corrected=True`` the
    arithmetic series ``r2*sst + mss*r2*(r2-1)/2`` is used instead, which is
    what a window growing one MSS per round actually sends.
    """
    if r2 < 1:
        raise ValueError("r2 must be at least 1")
    if corrected:
        return r2 * sst + mss * r2 * (r2 - 1) // 2
    return r2 * sst + mss * (r2 - 1)


def predict_efficiency(
    chunk_size: float,
    bdp_f: float,
    sst: float,
    mss: int = MSS,
    corrected: bool = False,
    epsilon: Optional[float] = None,
) -> ChunkPlan:
    """Full round accounting for one chunk transfer.

    ``sst`` above ``bdp_f`` is clamped to ``bdp_f``. When the chunk is used
    up before the window reaches the BDP, ``r3`` is 0, ``r1``/``r2`` count
    only the round trips actually spent (``r2`` is 0 if the chunk ends in
    slow start) and the plan is marked ``low_confidence``.
    """
    if chunk_size <= 0:
        raise ValueError("chunk size must be positive")
    if bdp_f <= 0:
        raise ValueError("bdp_f must be positive")
    sst = min(sst, bdp_f)
    r1 = rts_to_sst(sst, mss)
    b1 = bytes_slow_start(r1, mss)
    r2 = rts_sst_to_bdp(sst, bdp_f, mss)
    b2 = bytes_additive(r2, sst, mss, corrected)
    rest = chunk_size - (b1 + b2)
    low = rest <= 0
    r3 = 0 if low else math.ceil(rest / bdp_f)
    if low:
        r1, r2 = _rounds_used(chunk_size, r1, r2, sst, mss, corrected)
    e = chunk_size / ((r1 + r2 + r3) * bdp_f)
    return ChunkPlan(
        chunk_size=int(round(chunk_size)),
        r1=r1,
        r2=r2,
        r3=r3,
        b1=b1,
        b2=int(round(b2)),
        bdp_f=bdp_f,
        sst=sst,
        efficiency=e,
        epsilon=epsilon,
        low_confidence=low,
    )


def _rounds_used(
    chunk_size: float, r1: int, r2: int, sst: float, mss: int, corrected: bool
) -> tuple[int, int]:
    """Slow-start and additive-increase rounds needed before ``chunk_size``
    bytes are out, for a chunk that ends before the window reaches the BDP."""
    k = 1
    while k < r1 and bytes_slow_start(k, mss) < chunk_size:
        k += 1
    if bytes_slow_start(k, mss) >= chunk_size:
        return k, 0
    left = chunk_size - bytes_slow_start(r1, mss)
    j = 1
    while j < r2 and bytes_additive(j, sst, mss, corrected) < left:
        j += 1
    return r1, j


def predict_throughput(
    chunk_size: float,
    bandwidth: float,
    rtt: float,
    sst: Optional[float] = None,
    mss: int = MSS,
    corrected: bool = False,
) -> tuple[ChunkPlan, float]:
    """Predicted throughput (bytes/s) of a chunk at fair-share ``bandwidth``."""
    bdp = bandwidth * rtt
    if sst is None:
        sst = SST_FRACTION * bdp
    plan = predict_efficiency(chunk_size, bdp, sst, mss, corrected)
    return plan, plan.efficiency * bandwidth


def get_chunk_size(bandwidth: float, rtt: float, eps: float, mss: int = MSS) -> int:
    """Smallest chunk (bytes) that reaches ``1 - eps`` of fair-share throughput.

    Assumes the window restarts from 10 packets and the threshold sits at
    3/4 of the fair-share BDP.
    """
    if bandwidth <= 0 or rtt <= 0:
        raise ValueError("bandwidth and rtt must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie strictly between 0 and 1")
    bdp = bandwidth * rtt
    sst = bdp * SST_FRACTION
    r1 = rts_to_sst(sst, mss)
    r2 = rts_sst_to_bdp(sst, bdp, mss)
    total_rts = (r1 + r2) / eps
    return int(round((1 - eps) * total_rts * bdp))


def chunk_plan(bandwidth: float, rtt: float, eps: float, mss: int = MSS) -> ChunkPlan:
    """``get_chunk_size`` plus the round accounting of the resulting chunk."""
    size = get_chunk_size(bandwidth, rtt, eps, mss)
    bdp = bandwidth * rtt
    return predict_efficiency(size, bdp, SST_FRACTION * bdp, mss, epsilon=eps)
