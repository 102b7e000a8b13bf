"""Scenario description: JSON files with explicit unit suffixes, plus presets.

Quantities with a dimension must carry a unit ("3Mbps", "256KB", "20ms").
Sizes are decimal (1KB = 1000 bytes). Internally bandwidth is bytes/s,
times are seconds and sizes are bytes.

Example::

    {
      "link": {"bandwidth": "3Mbps", "one_way_delay": "10ms", "queue": "256KB"},
      "duration": "600s",
      "seed": 1,
      "flows": [
        {"id": "video", "kind": "video", "policy": {"kind": "pipelined_train"},
         "abr": "huang"},
        {"id": "bulk", "kind": "bulk"}
      ]
    }
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .dataplane import POLICY_KINDS, DownloadPolicy
from .player import DEFAULT_LADDER_KBPS, DEFAULT_TARGET

_NUM = r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)"
_BANDWIDTH = {"bps": 1, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9}
_SIZE = {"b": 1, "kb": 1e3, "mb": 1e6, "gb": 1e9}
_TIME = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "min": 60.0}


class ScenarioError(ValueError):
    """Invalid scenario content. ``line`` points into the source text when known."""

    def __init__(self, message: str, line: Optional[int] = None, text: Optional[str] = None):
        self.line = line
        self.text = text
        where = f"line {line}: " if line is not None else ""
        ctx = f"\n    {text.strip()}" if text else ""
        super().__init__(f"{where}{message}{ctx}")


def _split(value: Any, what: str) -> tuple[float, str]:
    if isinstance(value, bool) or isinstance(value, (int, float)):
        raise ScenarioError(f"{what}: unit-less number {value!r}; add a unit")
    if not isinstance(value, str):
        raise ScenarioError(f"{what}: expected a string with a unit, got {value!r}")
    m = re.fullmatch(_NUM + r"\s*([A-Za-z/]+)", value.strip())
    if not m:
        raise ScenarioError(f"{what}: cannot parse {value!r}")
    return float(m.group(1)), m.group(2)


def parse_bandwidth(value: Any, what: str = "bandwidth") -> float:
    """'3Mbps' -> 375000.0 bytes/s."""
    num, unit = _split(value, what)
    key = unit.lower()
    if key not in _BANDWIDTH:
        raise ScenarioError(f"{what}: unknown bandwidth unit {unit!r}")
    return num * _BANDWIDTH[key] / 8


def parse_bitrate(value: Any, what: str = "bitrate") -> float:
    """'1500kbps' -> 1500000.0 bits/s."""
    return parse_bandwidth(value, what) * 8


def parse_size(value: Any, what: str = "size") -> int:
    num, unit = _split(value, what)
    key = unit.lower()
    if key not in _SIZE:
        raise ScenarioError(f"{what}: unknown size unit {unit!r}")
    return int(round(num * _SIZE[key]))


def parse_time(value: Any, what: str = "time") -> float:
    num, unit = _split(value, what)
    key = unit.lower()
    if key not in _TIME:
        raise ScenarioError(f"{what}: unknown time unit {unit!r}")
    return num * _TIME[key]


# model -----------------------------------------------------------------------


@dataclass
class LinkConfig:
    bandwidth: float  # bytes/s
    one_way_delay: float  # seconds
    queue_bytes: int

    @property
    def rtt(self) -> float:
        return 2 * self.one_way_delay


@dataclass
class AbrConfig:
    kind: str = "huang"  # huang | bw_fraction | fixed | periodic
    fraction: float = 1.0
    bitrate: Optional[float] = None
    period: float = 30.0
    rates: tuple = ()

    def describe(self) -> str:
        if self.kind == "bw_fraction":
            return f"bw_fraction({self.fraction:g})"
        if self.kind == "fixed":
            return f"fixed({self.bitrate:.0f})"
        if self.kind == "periodic":
            return f"periodic({self.period:g}s)"
        return self.kind


@dataclass
class FlowConfig:
    id: str
    kind: str  # bulk | video
    policy: Optional[DownloadPolicy] = None
    abr: AbrConfig = field(default_factory=AbrConfig)
    ladder: tuple = tuple(k * 1000.0 for k in DEFAULT_LADDER_KBPS)
    start_time: float = 0.0
    stop_time: Optional[float] = None
    buffer_target: float = DEFAULT_TARGET
    initial_bitrate: Optional[float] = None
    total_bytes: Optional[int] = None  # bulk only; None = unbounded


@dataclass
class Scenario:
    link: LinkConfig
    flows: list
    duration: float
    seed: int = 0
    warmup: float = 30.0
    cooldown: float = 0.0
    epsilon: float = 0.1
    start_jitter: float = 0.1
    send_jitter: float = 0.001
    trace: bool = True
    competitors: Optional[list] = None
    name: str = "custom"

    def __post_init__(self) -> None:
        validate(self)

    @property
    def window(self) -> tuple[float, float]:
        return (self.warmup, self.duration - self.cooldown)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, flows=copy.deepcopy(self.flows))


def validate(sc: Scenario) -> None:
    if not sc.flows:
        raise ScenarioError("scenario needs at least one flow")
    if sc.duration <= sc.warmup + sc.cooldown:
        raise ScenarioError("duration must exceed the measurement warmup (plus cooldown)")
    if sc.link.bandwidth <= 0:
        raise ScenarioError("link bandwidth must be positive")
    if sc.link.one_way_delay < 0 or sc.link.queue_bytes < 0:
        raise ScenarioError("delay and queue size must be nonnegative")
    if not 0 < sc.epsilon < 1:
        raise ScenarioError("epsilon must lie in (0, 1)")
    if sc.start_jitter < 0 or sc.send_jitter < 0:
        raise ScenarioError("start_jitter and send_jitter must be nonnegative")
    ids = [f.id for f in sc.flows]
    if len(set(ids)) != len(ids):
        raise ScenarioError("flow ids must be unique")
    for f in sc.flows:
        if f.kind not in ("bulk", "video"):
            raise ScenarioError(f"flow {f.id}: kind must be bulk or video")
        if f.kind == "video" and f.policy is None:
            raise ScenarioError(f"flow {f.id}: video flows need a policy")
        if f.stop_time is not None and f.stop_time <= f.start_time:
            raise ScenarioError(f"flow {f.id}: stop_time must follow start_time")
    if sc.competitors:
        for c in sc.competitors:
            if c not in ids:
                raise ScenarioError(f"competitor {c!r} is not a flow id")


# parsing ---------------------------------------------------------------------

_TOP_KEYS = {
    "name", "link", "flows", "duration", "seed", "warmup", "cooldown",
    "epsilon", "start_jitter", "send_jitter", "trace", "competitors",
}
_LINK_KEYS = {"bandwidth", "one_way_delay", "queue"}
_FLOW_KEYS = {
    "id", "kind", "policy", "abr", "ladder", "start_time", "stop_time",
    "buffer_target", "initial_bitrate", "total",
}
_POLICY_KEYS = {
    "kind", "pause_between_requests", "train_size", "outstanding_limit",
    "enforce_min_train_on_resume", "segment_size",
}
_ABR_KEYS = {"kind", "fraction", "bitrate", "period", "rates"}


class _Locator:
    """Maps keys back to the source line that mentions them."""

    def __init__(self, text: Optional[str]) -> None:
        self.lines = text.splitlines() if text else []

    def find(self, key: str) -> tuple[Optional[int], Optional[str]]:
        pat = f'"{key}"'
        for i, line in enumerate(self.lines):
            if pat in line:
                return i + 1, line
        return None, None


def _check_keys(obj: dict, allowed: set, where: str, loc: _Locator) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    for k in obj:
        if k not in allowed:
            line, text = loc.find(k)
            raise ScenarioError(f"{where}: unknown key {k!r}", line, text)


def _field(obj: dict, key: str, conv, where: str, loc: _Locator, default: Any = ...):
    if obj.get(key) is None:
        if default is ...:
            raise ScenarioError(f"{where}: missing required field {key!r}")
        return default
    try:
        return conv(obj[key], f"{where}.{key}")
    except ScenarioError as e:
        line, text = loc.find(key)
        raise ScenarioError(str(e), line, text) from None


def _number(value: Any, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{what}: expected a plain number, got {value!r}")
    return float(value)


def _integer(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{what}: expected an integer, got {value!r}")
    return value


def _flag(value: Any, what: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioError(f"{what}: expected true/false, got {value!r}")
    return value


def _abr(value: Any, what: str, loc: _Locator) -> AbrConfig:
    if isinstance(value, str):
        m = re.fullmatch(r"(\w+)(?:\((.*)\))?", value.strip())
        if not m:
            raise ScenarioError(f"{what}: cannot parse {value!r}")
        kind, arg = m.group(1), m.group(2)
        if kind == "huang" and arg is None:
            return AbrConfig("huang")
        if kind == "bw_fraction" and arg:
            return AbrConfig("bw_fraction", fraction=float(arg))
        if kind == "fixed" and arg:
            return AbrConfig("fixed", bitrate=parse_bitrate(arg, what))
        raise ScenarioError(f"{what}: unknown ABR {value!r}")
    _check_keys(value, _ABR_KEYS, what, loc)
    kind = value.get("kind", "huang")
    if kind not in ("huang", "bw_fraction", "fixed", "periodic"):
        raise ScenarioError(f"{what}: unknown ABR kind {kind!r}")
    cfg = AbrConfig(kind)
    cfg.fraction = _field(value, "fraction", _number, what, loc, 1.0)
    cfg.bitrate = _field(value, "bitrate", parse_bitrate, what, loc, None)
    cfg.period = _field(value, "period", parse_time, what, loc, 30.0)
    rates = value.get("rates", [])
    cfg.rates = tuple(parse_bitrate(r, f"{what}.rates") for r in rates)
    if kind == "fixed" and cfg.bitrate is None:
        raise ScenarioError(f"{what}: fixed ABR needs a bitrate")
    if kind == "periodic" and not cfg.rates:
        raise ScenarioError(f"{what}: periodic ABR needs rates")
    return cfg


def _policy(value: Any, where: str, loc: _Locator, epsilon: float) -> DownloadPolicy:
    _check_keys(value, _POLICY_KEYS, where, loc)
    kind = value.get("kind")
    if kind not in POLICY_KINDS:
        raise ScenarioError(f"{where}: policy kind must be one of {POLICY_KINDS}")
    try:
        return DownloadPolicy(
            kind=kind,
            pause_between_requests=_field(value, "pause_between_requests", parse_time, where, loc, 0.0),
            train_size=_field(value, "train_size", parse_size, where, loc, None),
            outstanding_limit=_field(value, "outstanding_limit", _integer, where, loc, None),
            enforce_min_train_on_resume=_field(
                value, "enforce_min_train_on_resume", _flag, where, loc, True
            ),
            segment_size=_field(value, "segment_size", parse_size, where, loc, None),
            epsilon=epsilon,
        )
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"{where}: {e}") from None


def scenario_from_dict(data: dict, text: Optional[str] = None) -> Scenario:
    loc = _Locator(text)
    _check_keys(data, _TOP_KEYS, "scenario", loc)
    if "link" not in data:
        raise ScenarioError("scenario: missing required field 'link'")
    link_d = data["link"]
    _check_keys(link_d, _LINK_KEYS, "link", loc)
    link = LinkConfig(
        bandwidth=_field(link_d, "bandwidth", parse_bandwidth, "link", loc),
        one_way_delay=_field(link_d, "one_way_delay", parse_time, "link", loc),
        queue_bytes=_field(link_d, "queue", parse_size, "link", loc),
    )
    epsilon = _field(data, "epsilon", _number, "scenario", loc, 0.1)
    flows = []
    raw_flows = data.get("flows")
    if not isinstance(raw_flows, list):
        raise ScenarioError("scenario: 'flows' must be a list")
    for i, fd in enumerate(raw_flows):
        where = f"flows[{i}]"
        _check_keys(fd, _FLOW_KEYS, where, loc)
        kind = fd.get("kind")
        if kind not in ("bulk", "video"):
            raise ScenarioError(f"{where}: kind must be 'bulk' or 'video'")
        fc = FlowConfig(id=str(fd.get("id", f"flow{i}")), kind=kind)
        if kind == "video":
            if "policy" not in fd:
                raise ScenarioError(f"{where}: missing required field 'policy'")
            fc.policy = _policy(fd["policy"], f"{where}.policy", loc, epsilon)
            if "abr" in fd:
                fc.abr = _abr(fd["abr"], f"{where}.abr", loc)
            if "ladder" in fd:
                fc.ladder = tuple(parse_bitrate(r, f"{where}.ladder") for r in fd["ladder"])
            fc.buffer_target = _field(fd, "buffer_target", parse_time, where, loc, DEFAULT_TARGET)
            fc.initial_bitrate = _field(fd, "initial_bitrate", parse_bitrate, where, loc, None)
        fc.start_time = _field(fd, "start_time", parse_time, where, loc, 0.0)
        fc.stop_time = _field(fd, "stop_time", parse_time, where, loc, None)
        fc.total_bytes = _field(fd, "total", parse_size, where, loc, None)
        flows.append(fc)
    return Scenario(
        link=link,
        flows=flows,
        duration=_field(data, "duration", parse_time, "scenario", loc),
        seed=_field(data, "seed", _integer, "scenario", loc, 0),
        warmup=_field(data, "warmup", parse_time, "scenario", loc, 30.0),
        cooldown=_field(data, "cooldown", parse_time, "scenario", loc, 0.0),
        epsilon=epsilon,
        start_jitter=_field(data, "start_jitter", parse_time, "scenario", loc, 0.1),
        send_jitter=_field(data, "send_jitter", parse_time, "scenario", loc, 0.001),
        trace=_field(data, "trace", _flag, "scenario", loc, True),
        competitors=data.get("competitors"),
        name=str(data.get("name", "custom")),
    )


def parse_scenario_text(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        ctx = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else None
        raise ScenarioError(f"malformed JSON: {e.msg}", e.lineno, ctx) from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    return scenario_from_dict(data, text)


def parse_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario_text(fh.read())


# presets ---------------------------------------------------------------------


def _video(policy: dict, abr: Any = "huang", **extra) -> dict:
    d = {"id": "video", "kind": "video", "policy": policy, "abr": abr}
    d.update(extra)
    return d


_BULK = {"id": "bulk", "kind": "bulk"}


def _headline(policy: dict, abr: Any = "huang", queue: str = "256KB", **extra) -> dict:
    """Video and bulk flow together on the 3Mbps link for 20 minutes."""
    return {
        "link": {"bandwidth": "3Mbps", "one_way_delay": "10ms", "queue": queue},
        "duration": "1200s",
        "flows": [_video(policy, abr, **extra), dict(_BULK)],
    }


def _staged(policy: dict, abr: Any = "huang", queue: str = "256KB", **extra) -> dict:
    """Staged 30 minute run: video alone for 5 minutes, both for 20, bulk
    alone for the last 5. Only the 20 shared minutes are measured."""
    return {
        "link": {"bandwidth": "3Mbps", "one_way_delay": "10ms", "queue": queue},
        "duration": "1800s",
        "warmup": "300s",
        "cooldown": "300s",
        "flows": [
            _video(policy, abr, stop_time="1500s", **extra),
            {**_BULK, "start_time": "300s"},
        ],
    }


_FIG5_LINK = {"one_way_delay": "10ms", "queue": "100KB"}
_FIG5_SEQ = {"kind": "sequential", "segment_size": "1250KB"}

PRESETS: dict[str, dict] = {
    "fig5a": {
        "link": {"bandwidth": "2Mbps", **_FIG5_LINK},
        "duration": "60s",
        "warmup": "0s",
        "flows": [_video(_FIG5_SEQ)],
    },
    "fig5b": {
        "link": {"bandwidth": "4Mbps", **_FIG5_LINK},
        "duration": "60s",
        "warmup": "0s",
        "flows": [_video(_FIG5_SEQ), dict(_BULK)],
    },
    "fig5c": {
        "link": {"bandwidth": "4Mbps", **_FIG5_LINK},
        "duration": "60s",
        "warmup": "0s",
        "flows": [_video({**_FIG5_SEQ, "pause_between_requests": "4s"}), dict(_BULK)],
    },
    # single chunk transfers separated by idle gaps; the grid replay varies
    # delay, queue and chunk size around this base
    "fig6": {
        "link": {"bandwidth": "2.5Mbps", "one_way_delay": "50ms", "queue": "250KB"},
        "duration": "120s",
        "warmup": "0s",
        "trace": False,
        "flows": [
            _video({"kind": "sequential", "segment_size": "500KB", "pause_between_requests": "6s"})
        ],
    },
    "fig7": {
        "link": {"bandwidth": "3Mbps", "one_way_delay": "10ms", "queue": "256KB"},
        "duration": "300s",
        "trace": False,
        "flows": [_video({"kind": "sequential", "segment_size": "256KB"}), dict(_BULK)],
    },
    "fig8": _staged({"kind": "sequential"}),
    "fig10": _headline(
        {"kind": "pipelined_train"},
        {"kind": "bw_fraction", "fraction": 0.8},
        ladder=["200kbps", "400kbps", "600kbps", "900kbps", "1200kbps"],
    ),
    "fig11": _staged(
        {"kind": "expanded_range"},
        {"kind": "periodic", "period": "30s", "rates": ["1200kbps", "2000kbps"]},
    ),
    "table3": _headline({"kind": "sequential"}),
    "sprint": _staged({"kind": "pipelined_train"}),
    "sprint-x": _staged({"kind": "expanded_range"}),
}
for _name, _d in PRESETS.items():
    _d["name"] = _name

PRESET_NOTES = {
    "fig5a": "sequential 1250KB segments alone on a 2Mbps link, 20ms RTT, 100KB queue",
    "fig5b": "fig5a plus a competing bulk flow on a 4Mbps link",
    "fig5c": "fig5b with 4s pauses between segment requests",
    "fig6": "chunk transfers after idle gaps, 2.5Mbps link, 250KB queue (grid replay base)",
    "fig7": "sequential downloads vs bulk at 1500Kbps fair share (segment-size sweep base)",
    "fig8": "staged run, sequential DASH baseline vs bulk, 3Mbps/256KB, minutes 5-25 measured",
    "fig10": "20 minutes of Sprint with BW-80% ABR and a ladder below fair share vs bulk",
    "fig11": "staged run, Sprint-x with the bitrate forced to change every 30s",
    "table3": "20 minutes of sequential DASH baseline vs bulk, 3Mbps/256KB (queue sweep base)",
    "sprint": "staged run, Sprint vs bulk, 3Mbps/256KB",
    "sprint-x": "staged run, Sprint-x vs bulk, 3Mbps/256KB",
}


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def load_preset(name: str, **overrides: Any) -> Scenario:
    d = preset_dict(name)
    d.update(overrides)
    return scenario_from_dict(d)


def set_path(data: dict, path: str, value: Any) -> dict:
    """Set a dotted path ("link.queue", "flows.0.policy.kind") in a scenario dict."""
    parts = path.split(".")
    cur: Any = data
    for p in parts[:-1]:
        cur = cur[int(p)] if isinstance(cur, list) else cur.setdefault(p, {})
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
    return data
