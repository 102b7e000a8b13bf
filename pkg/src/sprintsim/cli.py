"""Command line entry point: run, sweep, chunksize, predict, presets.

Exit codes: 0 on success, 2 for usage or scenario errors, 1 when a run fails.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import statistics
import sys
from typing import Any, Optional, Sequence

from . import chunking
from .runner import prediction_replay, run, sweep, write_table
from .scenario import (
    PRESET_NOTES,
    PRESETS,
    ScenarioError,
    parse_bandwidth,
    parse_size,
    parse_time,
    preset_dict,
    scenario_from_dict,
    set_path,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _arg(conv, what):
    def parse(text: str):
        try:
            return conv(text, what)
        except (ScenarioError, ValueError) as e:
            raise argparse.ArgumentTypeError(str(e)) from None

    parse.__name__ = what
    return parse


def _bytes(text: str, what: str = "size") -> int:
    """Plain integers are bytes; anything else needs a size unit."""
    if text.strip().isdigit():
        return int(text)
    return parse_size(text, what)


def _eps(text: str, what: str = "eps") -> float:
    try:
        x = float(text)
    except ValueError:
        raise ValueError(f"{what}: not a number: {text!r}") from None
    if not 0 < x < 1:
        raise ValueError(f"{what}: must lie strictly between 0 and 1, got {x}")
    return x


def _value(text: str) -> Any:
    """Override values are JSON when they parse as JSON, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# scenario loading ----------------------------------------------------------------


def load_scenario_dict(args) -> tuple[dict, Optional[str]]:
    if bool(args.scenario) == bool(args.preset):
        raise UsageError("give exactly one of --scenario or --preset")
    if args.preset:
        data = preset_dict(args.preset)
        text = None
    else:
        try:
            with open(args.scenario) as fh:
                text = fh.read()
        except OSError as e:
            raise UsageError(f"cannot read scenario: {e}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            lines = text.splitlines()
            ctx = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else None
            raise ScenarioError(f"malformed JSON: {e.msg}", e.lineno, ctx) from None
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
    for item in args.set or []:
        path, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects PATH=VALUE, got {item!r}")
        set_path(data, path, _value(raw))
    if args.eps is not None:
        data["epsilon"] = args.eps
    return data, text


def _seed_list(args, data: dict) -> list[int]:
    first = args.seed if args.seed is not None else int(data.get("seed", 0))
    return list(range(first, first + args.seeds))


# subcommands -----------------------------------------------------------------


def cmd_run(args) -> int:
    data, text = load_scenario_dict(args)
    seeds = _seed_list(args, data)
    summaries = []
    for seed in seeds:
        d = copy.deepcopy(data)
        d["seed"] = seed
        sc = scenario_from_dict(d, text)
        out = None
        if args.out:
            out = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed{seed}")
        res = run(sc, out)
        summaries.append(res.summary)
        if len(seeds) == 1:
            sys.stdout.write(res.summary.to_text())
        else:
            fs = ", ".join(f"{f.flow_id}={f.fair_share_pct:.1f}" for f in res.summary.flows)
            print(f"seed {seed}: unfairness {res.summary.unfairness:.4f}  fair share % {fs}")
    if len(seeds) > 1:
        print(f"median over {len(seeds)} seeds:")
        print(f"  unfairness: {statistics.median(s.unfairness for s in summaries):.4f}")
        for i, f in enumerate(summaries[0].flows):
            med = statistics.median(s.flows[i].fair_share_pct for s in summaries)
            print(f"  {f.flow_id}.fair_share_pct: {med:.2f}")
    return EXIT_OK


def _dimension(item: str) -> tuple[str, list]:
    path, sep, raw = item.partition("=")
    if not sep or not raw:
        raise UsageError(f"--dim expects PATH=V1,V2,..., got {item!r}")
    return path, [_value(v) for v in raw.split(",")]


def cmd_sweep(args) -> int:
    data, _ = load_scenario_dict(args)
    if not args.dim:
        raise UsageError("sweep needs at least one --dim")
    dims = dict(_dimension(d) for d in args.dim)
    # validate every cell before spending time on any of them
    for path, values in dims.items():
        for v in values:
            scenario_from_dict(set_path(copy.deepcopy(data), path, v))
    rows = sweep(data, dims, seeds=_seed_list(args, data), workers=args.workers)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_table(rows, os.path.join(args.out, "sweep.csv"))
    keys = list(dims)
    for r in rows:
        cell = " ".join(f"{k}={r[k]}" for k in keys)
        shares = " ".join(
            f"{k.split('.')[0]}={v:.1f}" for k, v in r.items() if k.endswith(".fair_share_pct")
        )
        print(f"{cell}  unfairness={r['unfairness']:.4f}  fair_share_pct: {shares}")
    return EXIT_OK


def _print_plan(plan: chunking.ChunkPlan) -> None:
    print(f"chunk_bytes: {plan.chunk_size}")
    print(f"r1: {plan.r1}  (slow start, {plan.b1} bytes)")
    print(f"r2: {plan.r2}  (additive increase, {plan.b2} bytes)")
    print(f"r3: {plan.r3}  (at the fair-share BDP)")
    print(f"bdp_f_bytes: {plan.bdp_f:.0f}")
    print(f"sst_bytes: {plan.sst:.0f}")
    print(f"efficiency: {plan.efficiency:.4f}")
    if plan.low_confidence:
        print("low_confidence: chunk ends before the window reaches the BDP")


def cmd_chunksize(args) -> int:
    plan = chunking.chunk_plan(args.bw, args.rtt, args.eps)
    _print_plan(plan)
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.grid:
        points = prediction_replay(transfers=args.transfers, corrected=args.corrected)
        rows = [
            (p.queue_bytes, f"{p.rtt:.3f}", p.chunk, f"{p.sst:.0f}", f"{p.predicted * 8:.0f}",
             f"{p.measured * 8:.0f}", f"{p.error:.4f}", int(p.low_confidence))
            for p in points
        ]
        header = ("queue_bytes", "rtt_s", "chunk_bytes", "sst_bytes", "predicted_bps",
                  "measured_bps", "rel_error", "low_confidence")
        if args.out:
            import csv

            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "prediction.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        print(",".join(header))
        for r in rows:
            print(",".join(str(x) for x in r))
        return EXIT_OK
    if args.size is None or args.bw is None or args.rtt is None:
        raise UsageError("predict needs S, --bw and --rtt (or --grid)")
    plan, tput = chunking.predict_throughput(
        args.size, args.bw, args.rtt, sst=args.sst, corrected=args.corrected
    )
    _print_plan(plan)
    print(f"throughput_bps: {tput * 8:.0f}")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.show:
        print(json.dumps(preset_dict(args.show), indent=2))
        return EXIT_OK
    for name in sorted(PRESETS):
        print(f"{name:10s} {PRESET_NOTES.get(name, '')}")
    return EXIT_OK


# parser ------------------------------------------------------------------------


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", metavar="FILE", help="scenario JSON file")
    p.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="named preset")
    p.add_argument("--seed", type=int, help="first seed (default: the scenario's)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--eps", type=_arg(_eps, "eps"), help="chunk-sizing epsilon")
    p.add_argument(
        "--set", action="append", metavar="PATH=VALUE",
        help="override a scenario field, e.g. link.queue=512KB",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sprintsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    _scenario_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="cartesian sweep over scenario fields")
    _scenario_args(p)
    p.add_argument("--dim", action="append", metavar="PATH=V1,V2", help="sweep dimension")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("chunksize", help="chunk size for a target efficiency")
    p.add_argument("--bw", required=True, type=_arg(parse_bandwidth, "bw"), help="e.g. 2Mbps")
    p.add_argument("--rtt", required=True, type=_arg(parse_time, "rtt"), help="e.g. 100ms")
    p.add_argument("--eps", required=True, type=_arg(_eps, "eps"))
    p.set_defaults(func=cmd_chunksize)

    p = sub.add_parser("predict", help="predicted efficiency and throughput of a chunk")
    p.add_argument("size", nargs="?", type=_arg(_bytes, "S"), help="chunk size, bytes")
    p.add_argument("--bw", type=_arg(parse_bandwidth, "bw"))
    p.add_argument("--rtt", type=_arg(parse_time, "rtt"))
    p.add_argument("--sst", type=_arg(_bytes, "sst"), help="slow-start threshold, bytes")
    p.add_argument("--corrected", action="store_true", help="arithmetic-series additive bytes")
    p.add_argument("--grid", action="store_true", help="replay the simulated prediction grid")
    p.add_argument("--transfers", type=int, default=10)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("presets", help="list presets")
    p.add_argument("--show", metavar="NAME", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as e:
        print(f"sprintsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        print(f"sprintsim: run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
