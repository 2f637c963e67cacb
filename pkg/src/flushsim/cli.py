"""Command-line front end.

Subcommands: simulate one scenario, sweep an axis of a scenario across its
volumes, plan table placement, price availability, and compare scenarios
or saved reports side by side. Exit codes: 0 success, 1 bad input (unknown
scenario, bad key, validation failure), 2 unexpected runtime error.
"""

import argparse
import csv
import json
import os
import sys
import time

from .kernels import ACTIVE_LANE
from .placement import (
    AvailabilityParams,
    ScoreParams,
    plan as make_plan,
)
from .scenario_io import (
    ScenarioError,
    apply_overrides,
    availability_report,
    build_world,
    builtin_scenarios,
    load_table_stats,
    parse_size,
    plan_file_text,
    report_json,
    resolve_scenario,
    write_report,
    write_timeline_csv,
)
from .storage import ValidationError
from .workload import table_stats, tpcc_like_mix


def _apply_common(cfg: dict, args) -> dict:
    apply_overrides(cfg, getattr(args, "params", None))
    sim = cfg.setdefault("sim", {})
    if getattr(args, "seed", None) is not None:
        sim["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        sim["duration_s"] = args.duration
    return cfg


def _emit(payload: dict, out_path):
    if out_path:
        write_report(payload, out_path)
    else:
        sys.stdout.write(report_json(payload))


def cmd_simulate(args) -> int:
    cfg, text = resolve_scenario(args.scenario)
    _apply_common(cfg, args)
    world = build_world(cfg, text)
    t0 = time.perf_counter()
    report = world.run()
    wall = time.perf_counter() - t0
    if not args.quiet:
        print(
            f"{args.scenario}: lane={ACTIVE_LANE} wall={wall:.2f}s",
            file=sys.stderr,
        )
    _emit(report, args.out)
    timeline = args.timeline
    if timeline is None and args.out:
        timeline = os.path.splitext(args.out)[0] + ".timeline.csv"
    if timeline:
        write_timeline_csv(report, timeline)
    return 0


def _write_rows(rows, fieldnames, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fieldnames)
            w.writeheader()
            w.writerows(rows)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)


def cmd_sweep(args) -> int:
    cfg, text = resolve_scenario(args.scenario)
    _apply_common(cfg, args)
    jobs = cfg.get("fio", [])
    if len(jobs) != 1:
        raise ScenarioError("sweep needs a scenario with exactly one [[fio]] job")
    template = jobs[0]
    raw_values = [v for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ScenarioError("--values is empty")
    if args.axis == "threads":
        try:
            values = [int(v) for v in raw_values]
        except ValueError:
            raise ScenarioError("--values for threads must be integers") from None
    else:
        values = [parse_size(v, "--values") for v in raw_values]
    volumes = cfg.get("volumes", [])
    if not volumes:
        raise ScenarioError("sweep scenario has no volumes")
    devices_by_name = {d["name"]: d for d in cfg.get("devices", [])}
    rows = []
    for value in values:
        for vol in volumes:
            sub = {
                "sim": dict(cfg.get("sim", {})),
                "devices": [devices_by_name[d] for d in vol["devices"]],
                "volumes": [vol],
                "fio": [dict(template, volume=vol["name"], **{args.axis: value})],
            }
            if "throttle" in cfg:
                sub["throttle"] = cfg["throttle"]
            world = build_world(sub, text)
            report = world.run()
            job_name = template["name"]
            profile = world.volumes[vol["name"]].members[0].profile.name
            written = sum(d["bytes_written"] for d in report["devices"].values())
            duration = report["meta"]["duration_s"] or 1.0
            rows.append(
                {
                    args.axis: value,
                    "volume": vol["name"],
                    "profile": profile,
                    "app_mb_per_s": round(
                        report["fio"][job_name]["app_bytes_per_s"] / 1e6, 3
                    ),
                    "device_write_mb_per_s": round(written / duration / 1e6, 3),
                }
            )
    fields = [args.axis, "volume", "profile", "app_mb_per_s", "device_write_mb_per_s"]
    _write_rows(rows, fields, args.out)
    return 0


_SCORE_KEYS = ("write_weight", "read_weight", "size_weight", "cv_threshold")


def _score_params(pairs) -> ScoreParams:
    overrides = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or key not in _SCORE_KEYS:
            raise ScenarioError(
                f"--params for plan takes key=value with key in "
                f"{', '.join(_SCORE_KEYS)}; got {pair!r}"
            )
        try:
            overrides[key] = float(value)
        except ValueError:
            raise ScenarioError(f"--params {key}: {value!r} is not a number") from None
    return ScoreParams(**overrides)


def cmd_plan(args) -> int:
    mix = tpcc_like_mix()
    if os.path.exists(args.stats):
        stats = load_table_stats(args.stats)
    elif args.stats == mix.name:
        stats = table_stats(mix)
    else:
        raise ScenarioError(
            f"no stats file {args.stats!r} (the builtin mix {mix.name!r} "
            f"also works as a stats source)"
        )
    result = make_plan(stats, args.vcpus, _score_params(args.params))
    text = plan_file_text(result)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    data_groups = [g for g in result.groups if g.index > 0]
    wal_note = result.groups[0].note
    print(
        f"{result.kft_count} groups (wal + {len(data_groups)} data), "
        f"cv {result.cv:.3f}, wal: {wal_note}"
        + (f" -> {args.out}" if args.out else ""),
        file=sys.stderr,
    )
    return 0


def cmd_availability(args) -> int:
    params = AvailabilityParams(
        block_failure_prob=args.block_failure_prob,
        replicas=args.replicas,
        total_blocks=args.blocks,
        volumes=args.volumes,
    )
    report = availability_report(params)
    print(
        f"loss split over {params.volumes} volume(s): "
        f"{report['partitioned_failure_prob']:.17g}\n"
        f"loss as one volume:        {report['unpartitioned_failure_prob']:.17g}\n"
        f"|delta| relative:          {report['rel_delta']:.3e}"
    )
    if args.out:
        write_report(report, args.out)
    return 0


def _report_entry(report: dict) -> dict:
    entry = {}
    if "oltp" in report:
        entry["txn_rate_per_min"] = report["oltp"]["txn_rate_per_min"]
        entry["commits"] = report["oltp"]["commits"]
        entry["commit_latency_mean_us"] = report["oltp"]["commit_latency_mean_us"]
    if "fio" in report:
        entry["fio_app_bytes_per_s"] = {
            j: v["app_bytes_per_s"] for j, v in report["fio"].items()
        }
    return entry


def cmd_compare(args) -> int:
    results = {}
    for name in args.scenarios:
        if name.endswith(".json") and os.path.exists(name):
            with open(name, encoding="utf-8") as fh:
                report = json.load(fh)
            if "meta" not in report:
                raise ScenarioError(f"{name}: not a simulation report")
        else:
            cfg, text = resolve_scenario(name)
            _apply_common(cfg, args)
            report = build_world(cfg, text).run()
        results[name] = _report_entry(report)
    ranked = sorted(
        results,
        key=lambda n: results[n].get("txn_rate_per_min", 0.0),
        reverse=True,
    )
    for name in ranked:
        rate = results[name].get("txn_rate_per_min")
        if rate is not None:
            print(f"{name}: {rate:.0f} txn/min", file=sys.stderr)
    _emit({"ranking": ranked, "results": results}, args.out)
    return 0


def cmd_scenarios(args) -> int:
    for name in builtin_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flushsim",
        description="Writeback and placement simulator for cloud block storage.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, duration=True):
        p.add_argument("--seed", type=int, default=None, help="override [sim] seed")
        if duration:
            p.add_argument(
                "--duration", type=float, default=None, help="override duration (s)"
            )
        p.add_argument(
            "--params",
            action="append",
            metavar="KEY=VALUE",
            help="override a scenario key by dotted path (repeatable)",
        )
        p.add_argument("--out", default=None, help="write output here, not stdout")

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario", help="builtin scenario name or TOML path")
    common(p)
    p.add_argument(
        "--timeline",
        default=None,
        help="per-second CSV path (default: alongside --out)",
    )
    p.add_argument("--quiet", action="store_true", help="suppress stderr summary")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="vary one fio axis across a scenario's volumes")
    p.add_argument("scenario")
    p.add_argument("--axis", choices=("threads", "io_size"), required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plan", help="place tables onto volume groups")
    p.add_argument(
        "stats",
        help="TOML stats file of [[tables]] rows, or the builtin mix name",
    )
    p.add_argument("--vcpus", type=int, required=True)
    p.add_argument(
        "--params",
        action="append",
        metavar="KEY=VALUE",
        help="score weights / cv_threshold overrides (repeatable)",
    )
    p.add_argument("--out", default=None, help="plan file path (default: stdout)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser(
        "availability",
        help="show that volume count cancels out of the loss probability",
    )
    p.add_argument(
        "--block-failure-prob", type=float, required=True, help="per block, in [0,1]"
    )
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--blocks", type=int, default=1, help="total capacity in blocks")
    p.add_argument(
        "--volumes", type=int, default=1, help="volume count; must divide --blocks"
    )
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(fn=cmd_availability)

    p = sub.add_parser(
        "compare", help="run scenarios (or re-read report JSONs) and rank them"
    )
    p.add_argument("scenarios", nargs="+", help="scenario names or report .json paths")
    common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("scenarios", help="list builtin scenarios")
    p.set_defaults(fn=cmd_scenarios)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage; our contract says 1
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 2
    except Exception as exc:  # deliberate catch-all: CLI contract is exit 2
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
