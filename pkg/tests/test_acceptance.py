"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Simulation-heavy criteria take minutes; results of shared runs are cached
across tests within the session.
"""

import filecmp
import functools
import json
import statistics
import time
from pathlib import Path

from conftest import ACCEPTANCE

from sprintsim.chunking import get_chunk_size, predict_efficiency
from sprintsim.cli import main as cli_main
from sprintsim.metrics import fraction_below_fair_bdp, inadequate_window_intervals, read_trace_csv
from sprintsim.runner import build, prediction_replay, run, segment_size_sweep
from sprintsim.scenario import preset_dict, scenario_from_dict, set_path

SEEDS = range(5)


def report(n, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


@functools.lru_cache(maxsize=None)
def summary(preset, seed, overrides=()):
    """SessionSummary of a preset run; ``overrides`` is a tuple of
    (dotted path, JSON value) pairs."""
    d = preset_dict(preset)
    d["trace"] = False
    d["seed"] = seed
    for path, value in overrides:
        set_path(d, path, json.loads(value))
    return run(scenario_from_dict(d)).summary


def median_of(preset, fn, overrides=()):
    return statistics.median(fn(summary(preset, s, overrides)) for s in SEEDS)


def video_share(s):
    return s.video.fair_share_pct


# 1 -----------------------------------------------------------------------------


def test_c1_program1_exact(capsys):
    t0 = time.perf_counter()
    a = get_chunk_size(250_000, 0.1, 0.1)
    elapsed = time.perf_counter() - t0
    b = get_chunk_size(50_000, 0.02, 0.1)
    code = cli_main(["chunksize", "--bw", "2Mbps", "--rtt", "100ms", "--eps", "0.1"])
    out = capsys.readouterr().out
    ok = a == 1_575_000 and b == 18_000 and code == 0 and "chunk_bytes: 1575000" in out
    ok = ok and elapsed < 1e-3
    with capsys.disabled():
        report(1, ok, f"chunks {a} and {b} bytes, {elapsed * 1e6:.0f}us per call")
    assert ok


# 2 -----------------------------------------------------------------------------


def eps_grid():
    bws = [0.5, 1, 2, 3, 4, 5, 6, 8, 10]  # Mbps
    rtts = [0.02, 0.05, 0.1, 0.2, 0.35, 0.5]
    cells = [(bw * 1e6 / 8, rtt, eps) for bw in bws for rtt in rtts for eps in (0.05, 0.1, 0.2)]
    step = len(cells) / 100
    return [cells[int(i * step)] for i in range(100)]


def test_c2_eps_guarantee(capsys):
    grid = eps_grid()
    t0 = time.perf_counter()
    bad = []
    for bw, rtt, eps in grid:
        bdp = bw * rtt
        e = predict_efficiency(get_chunk_size(bw, rtt, eps), bdp, 0.75 * bdp).efficiency
        if e < 1 - eps:
            bad.append((bw, rtt, eps, e))
    elapsed = time.perf_counter() - t0
    ok = len(grid) == 100 and not bad and elapsed < 1
    with capsys.disabled():
        report(2, ok, f"{len(bad)} exceptions in {len(grid)} points, {elapsed * 1e3:.1f}ms")
    assert ok


# 3 -----------------------------------------------------------------------------


def test_c3_slow_start_oracle(capsys):
    from test_tcp import slow_start_delivered

    got = {r: slow_start_delivered(r) for r in range(1, 7)}
    want = {r: 10 * 1460 * (2**r - 1) for r in range(1, 7)}
    ok = got == want
    with capsys.disabled():
        report(3, ok, f"delivered after r1=1..6 RTTs {list(got.values())}")
    assert ok


# 4 -----------------------------------------------------------------------------


def test_c4_model_vs_simulation(capsys):
    t0 = time.perf_counter()
    points = prediction_replay()
    elapsed = time.perf_counter() - t0
    within = sum(abs(p.error) <= 0.2 for p in points)
    frac = within / len(points)
    worst = min(points, key=lambda p: p.error)
    ok = frac >= 0.9 and elapsed < 120
    with capsys.disabled():
        report(
            4, ok,
            f"{within}/{len(points)} cells within 20% ({frac:.0%}), worst {worst.error:+.0%} "
            f"at rtt {worst.rtt:.1f}s chunk {worst.chunk}, {elapsed:.0f}s",
        )
    assert ok


# 5 -----------------------------------------------------------------------------


def test_c5_segment_size_monotone(capsys):
    t0 = time.perf_counter()
    rows = segment_size_sweep(transfers=50)
    elapsed = time.perf_counter() - t0
    meds = [m for _, m in rows]
    mono = all(a <= b for a, b in zip(meds, meds[1:]))
    ratio = meds[-1] / meds[0]
    ok = mono and ratio >= 2 and elapsed < 300
    kbps = ", ".join(f"{s // 1000}k:{m * 8 / 1e3:.0f}" for s, m in rows)
    with capsys.disabled():
        report(5, ok, f"median kbps {kbps}; 2048k/32k {ratio:.2f}, {elapsed:.0f}s")
    assert ok


# 6 -----------------------------------------------------------------------------


def fig5_trace(name, tmp_path):
    d = preset_dict(name)
    res = run(scenario_from_dict(d), tmp_path / name)
    cols = read_trace_csv(tmp_path / name / "trace.csv")["video"]
    return res, cols


def test_c6_fig5_scenarios(capsys, tmp_path):
    _, a = fig5_trace("fig5a", tmp_path)
    _, b = fig5_trace("fig5b", tmp_path)
    res_c, c = fig5_trace("fig5c", tmp_path)
    na = len(inadequate_window_intervals(a))
    nb = len(inadequate_window_intervals(b))
    first_pause = res_c.simulation.flow("video").requests[0].completed_at
    frac = fraction_below_fair_bdp(c, int(first_pause * 1e6))
    ok = na == 0 and nb >= 3 and frac > 0.8
    with capsys.disabled():
        report(
            6, ok,
            f"fig5a {na} intervals (want 0), fig5b {nb} (want >=3), "
            f"fig5c below fair-BDP {frac:.0%} of the time after the first pause (want >80%)",
        )
    assert ok


# 7 -----------------------------------------------------------------------------


def test_c7_headline_fairness(capsys):
    t0 = time.perf_counter()
    sprint = median_of("sprint", video_share)
    sprint_x = median_of("sprint-x", video_share)
    changes = median_of("sprint-x", lambda s: s.video.bitrate_changes)
    seq = median_of("fig8", video_share)
    elapsed = time.perf_counter() - t0
    ok = sprint >= 90 and sprint_x >= 85 and changes <= 1 and seq <= sprint - 10
    with capsys.disabled():
        report(
            7, ok,
            f"median fair share Sprint {sprint:.1f}, Sprint-x {sprint_x:.1f} "
            f"({changes:g} bitrate changes), sequential {seq:.1f}, {elapsed:.0f}s",
        )
    assert ok


# 8 -----------------------------------------------------------------------------

Q512 = (("link.queue", '"512KB"'),)
SPRINT = (("flows.0.policy.kind", '"pipelined_train"'),)


def unfair(s):
    return s.unfairness


def test_c8_queue_size_degradation(capsys):
    seq256 = median_of("table3", unfair)
    seq512 = median_of("table3", unfair, Q512)
    sp256 = median_of("table3", unfair, SPRINT)
    sp512 = median_of("table3", unfair, SPRINT + Q512)
    ok = seq512 - seq256 >= 0.1 and sp256 <= 0.1 and sp512 <= 0.1
    with capsys.disabled():
        report(
            8, ok,
            f"sequential unfairness {seq256:.3f} -> {seq512:.3f} (256KB -> 512KB), "
            f"Sprint {sp256:.3f} / {sp512:.3f}",
        )
    assert ok


# 9 -----------------------------------------------------------------------------


def test_c9_minimum_train_ablation(capsys):
    frac = preset_dict("fig10")["flows"][0]["abr"]["fraction"]
    off = (("flows.0.policy.enforce_min_train_on_resume", "false"),)
    on_fs = median_of("fig10", video_share)
    off_fs = median_of("fig10", video_share, off)
    on_exp, off_exp = on_fs / min(1, frac), off_fs / min(1, frac)
    ok = on_exp - off_exp >= 15
    with capsys.disabled():
        report(
            9, ok,
            f"expected fair share with minimum train {on_exp:.1f}, without {off_exp:.1f} "
            f"(gap {on_exp - off_exp:.1f})",
        )
    assert ok


# 10 ----------------------------------------------------------------------------


def test_c10_cancel_penalty(capsys):
    steady = (("flows.0.abr", '"fixed(2000kbps)"'),)
    periodic = median_of("fig11", video_share)
    fixed = median_of("fig11", video_share, steady)
    cancels = median_of("fig11", lambda s: s.video.cancels)
    fixed_changes = max(summary("fig11", s, steady).video.bitrate_changes for s in SEEDS)
    ok = fixed - periodic >= 10 and fixed_changes == 0
    with capsys.disabled():
        report(
            10, ok,
            f"Sprint-x fair share with 30s bitrate changes {periodic:.1f} "
            f"({cancels:g} cancels), without changes {fixed:.1f}",
        )
    assert ok


# 11 ----------------------------------------------------------------------------


def four_bulk(extra=()):
    flows = preset_dict("table3")["flows"]
    video, bulk = flows[0], flows[1]
    bulks = [dict(bulk, id=f"bulk{i}") for i in range(4)]
    return (("flows", json.dumps([video] + bulks)),) + tuple(extra)


def test_c11_many_bulk_flows(capsys):
    seq1 = median_of("table3", video_share)
    seq4 = median_of("table3", video_share, four_bulk())
    sp4 = median_of("table3", video_share, four_bulk(SPRINT))
    ok = sp4 >= 90 and abs(seq4 - seq1) <= 10
    with capsys.disabled():
        report(
            11, ok,
            f"with 4 bulk flows Sprint {sp4:.1f}, sequential {seq4:.1f} "
            f"(vs {seq1:.1f} with one)",
        )
    assert ok


# 12 ----------------------------------------------------------------------------


def test_c12_determinism(capsys, tmp_path):
    same = True
    for name in ("fig5b", "fig11"):
        d = preset_dict(name)
        d["duration"] = "400s" if name == "fig11" else "60s"
        if name == "fig11":
            d["warmup"], d["cooldown"] = "100s", "0s"
        for k in ("a", "b"):
            run(scenario_from_dict(d), tmp_path / name / k)
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        files = sorted(p.name for p in Path(a).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        same = same and not mismatch and not errors and len(match) == 5
    with capsys.disabled():
        report(12, same, "two runs per scenario, all five output files byte-identical")
    assert same
