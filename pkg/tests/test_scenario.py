import json

import pytest

from sprintsim.scenario import (
    PRESETS,
    ScenarioError,
    load_preset,
    parse_bandwidth,
    parse_scenario,
    parse_scenario_text,
    parse_size,
    parse_time,
    preset_dict,
    scenario_from_dict,
    set_path,
)


def test_units_are_decimal():
    assert parse_bandwidth("3Mbps") == 375_000
    assert parse_bandwidth("1500kbps") == 187_500
    assert parse_size("256KB") == 256_000
    assert parse_size("1.8MB") == 1_800_000
    assert parse_time("20ms") == pytest.approx(0.02)
    assert parse_time("2min") == 120


@pytest.mark.parametrize("bad", [3, "3", "3 parsecs", None, True])
def test_unitless_or_unknown_units_rejected(bad):
    with pytest.raises(ScenarioError):
        parse_bandwidth(bad)


def test_fig5b_preset():
    sc = load_preset("fig5b")
    assert sc.link.bandwidth == 500_000
    assert sc.link.bandwidth / len(sc.flows) * 8 == 2e6
    assert sc.link.rtt == pytest.approx(0.02)
    assert sc.link.queue_bytes == 100_000
    video = sc.flows[0]
    assert video.policy.kind == "sequential"
    assert video.policy.segment_size == 1_250_000
    assert video.policy.pause_between_requests == 0


def test_fig7_preset():
    sc = load_preset("fig7")
    assert sc.flows[0].policy.kind == "sequential"
    assert sc.link.bandwidth / len(sc.flows) * 8 == 1.5e6


def test_every_preset_parses():
    for name in PRESETS:
        assert load_preset(name).name == name


def _text(d):
    return json.dumps(d, indent=2)


def test_missing_bandwidth_names_the_field():
    d = preset_dict("fig5a")
    del d["link"]["bandwidth"]
    with pytest.raises(ScenarioError, match="bandwidth"):
        parse_scenario_text(_text(d))


def test_unknown_key_reports_line():
    d = preset_dict("fig5a")
    d["link"]["colour"] = "red"
    with pytest.raises(ScenarioError) as ei:
        parse_scenario_text(_text(d))
    assert ei.value.line is not None
    assert "colour" in str(ei.value)


def test_unitless_number_reports_line():
    d = preset_dict("fig5a")
    d["link"]["queue"] = 100000
    with pytest.raises(ScenarioError) as ei:
        parse_scenario_text(_text(d))
    assert "unit-less" in str(ei.value) and ei.value.line is not None


def test_malformed_json_reports_line():
    with pytest.raises(ScenarioError) as ei:
        parse_scenario_text('{\n  "link": {,\n}')
    assert ei.value.line == 2


def test_invariants_enforced():
    d = preset_dict("fig5a")
    d["flows"] = []
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)
    d = preset_dict("fig5a")
    d["warmup"] = "100s"
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


def test_null_fields_count_as_absent():
    d = preset_dict("fig5a")
    d["flows"][0]["stop_time"] = None
    assert scenario_from_dict(d).flows[0].stop_time is None


def test_parse_scenario_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(_text(preset_dict("fig10")))
    sc = parse_scenario(p)
    assert sc.flows[0].abr.kind == "bw_fraction"
    assert sc.flows[0].abr.fraction == 0.8


def test_set_path():
    d = preset_dict("table3")
    set_path(d, "link.queue", "512KB")
    set_path(d, "flows.0.policy.kind", "pipelined_train")
    sc = scenario_from_dict(d)
    assert sc.link.queue_bytes == 512_000
    assert sc.flows[0].policy.kind == "pipelined_train"
