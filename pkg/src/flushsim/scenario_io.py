"""Scenario files and result serialization.

Scenarios are TOML: a [sim] block, [[devices]], [[volumes]], then either
[[fio]] jobs or an [oltp] block. Sizes may be plain byte counts or strings
with binary suffixes ("8KB", "1MB", "200GB"). Parsing is strict: an
unknown key is an error, with the offending line quoted when it can be
found in the source.
"""

import csv
import importlib.resources
import json
import re
from dataclasses import replace

try:
    import tomllib
except ImportError:  # 3.10
    import tomli as tomllib

from .engine import World
from .placement import AvailabilityParams, PlacementPlan
from .storage import GiB, PAGE_SIZE, STOCK_PROFILES, DeviceProfile
from .workload import FioJob, OltpMix, TableSpec, tpcc_like_mix
from .writeback import FlusherParams, ThrottleParams


class ScenarioError(ValueError):
    pass


_SIZE_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*([A-Za-z]*)\s*$")
_SIZE_SUFFIX = {
    "": 1,
    "B": 1,
    "K": 1024,
    "KB": 1024,
    "KIB": 1024,
    "M": 1024**2,
    "MB": 1024**2,
    "MIB": 1024**2,
    "G": 1024**3,
    "GB": 1024**3,
    "GIB": 1024**3,
    "T": 1024**4,
    "TB": 1024**4,
    "TIB": 1024**4,
}


def parse_size(value, where: str = "size") -> int:
    """Byte count from an int, float, or suffixed string (binary units)."""
    if isinstance(value, bool):
        raise ScenarioError(f"{where}: expected a size, got a boolean")
    if isinstance(value, (int, float)):
        return int(value)
    if isinstance(value, str):
        m = _SIZE_RE.match(value)
        if m:
            suffix = m.group(2).upper()
            if suffix in _SIZE_SUFFIX:
                return int(float(m.group(1)) * _SIZE_SUFFIX[suffix])
        raise ScenarioError(f"{where}: cannot parse size {value!r}")
    raise ScenarioError(f"{where}: expected a size, got {type(value).__name__}")


def _line_of(text: str, token: str):
    for i, line in enumerate(text.splitlines(), start=1):
        if token in line:
            return i
    return None


def _anchored(text: str, token: str, message: str) -> str:
    loc = _line_of(text, token)
    return f"{message} (line {loc})" if loc else message


def _check_keys(section: dict, allowed, where: str, text: str):
    for key in section:
        if key not in allowed:
            loc = _line_of(text, key)
            at = f" (line {loc})" if loc else ""
            raise ScenarioError(
                f"unknown key {key!r} in {where or 'top level'}{at}; "
                f"allowed: {', '.join(sorted(allowed))}"
            )


_TOP_KEYS = {"title", "sim", "throttle", "devices", "volumes", "fio", "oltp"}
_SIM_KEYS = {"seed", "duration_s", "vcpus", "memory"}
_THROTTLE_KEYS = {"background_ratio", "hard_ratio", "max_pause_ms"}
_DEVICE_KEYS = {
    "name",
    "profile",
    "base_latency_us",
    "latency_jitter",
    "internal_bandwidth",
    "iops_limit",
    "bandwidth_limit",
    "hw_queue_count",
    "burst_iops",
    "burst_credit_capacity",
    "amortizable_latency_share",
    "capacity",
}
_DEVICE_SIZE_KEYS = {"internal_bandwidth", "bandwidth_limit", "capacity"}
_VOLUME_KEYS = {
    "name",
    "devices",
    "chunk",
    "flusher_interval_ms",
    "flusher_budget",
    "flusher_max_merged",
}
_FIO_KEYS = {"name", "volume", "kind", "io_size", "threads", "direct", "region_size"}
_OLTP_KEYS = {
    "mix",
    "clients",
    "commit_rate",
    "wal_write_size",
    "wal_segment_size",
    "checkpoint_interval_ms",
    "read_scale",
    "placement",
    "placement_file",
    "tables",
}
_TABLE_KEYS = {"name", "size", "write_pages_per_txn", "read_freq"}


def load_toml(path) -> tuple:
    """Returns (cfg dict, raw text) for error anchoring."""
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8", errors="replace")
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def builtin_scenarios() -> list:
    root = importlib.resources.files("flushsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_scenario(name_or_path: str) -> tuple:
    """Accepts a builtin scenario name or a filesystem path."""
    import os

    if os.path.exists(name_or_path):
        return load_toml(name_or_path)
    root = importlib.resources.files("flushsim") / "scenarios"
    candidate = root / f"{name_or_path}.toml"
    if candidate.is_file():
        text = candidate.read_text(encoding="utf-8")
        try:
            return tomllib.loads(text), text
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{name_or_path}: {exc}") from exc
    known = ", ".join(builtin_scenarios())
    raise ScenarioError(f"no scenario {name_or_path!r}; builtins: {known}")


def load_table_stats(path) -> dict:
    """Planner input: a TOML file of [[tables]] rows with the same fields a
    scenario's [[oltp.tables]] takes. Returns name -> (write rate, read
    rate, size). Rates are per transaction; the planner only compares
    normalized columns, so any consistent scale gives the same plan."""
    cfg, text = load_toml(path)
    _check_keys(cfg, {"title", "tables"}, "top level", text)
    rows = cfg.get("tables", [])
    if not rows:
        raise ScenarioError(f"{path}: no [[tables]] entries")
    stats = {}
    for row in rows:
        _check_keys(row, _TABLE_KEYS, f"table {row.get('name', '?')!r}", text)
        if "name" not in row:
            raise ScenarioError("every [[tables]] entry needs a name")
        name = row["name"]
        if name in stats:
            raise ScenarioError(_anchored(text, name, f"duplicate table {name!r}"))
        stats[name] = (
            float(row.get("write_pages_per_txn", 0.0)) * PAGE_SIZE,
            float(row.get("read_freq", 0.0)),
            float(parse_size(row.get("size", 0), f"table {name}: size")),
        )
    return stats


def plan_volume_names(result: PlacementPlan) -> dict:
    """Group index -> volume name convention shared by plan files and the
    scenarios that consume them: the log group is "wal", data groups are
    "data1".."dataN"."""
    return {
        g.index: "wal" if g.index == 0 else f"data{g.index}" for g in result.groups
    }


def plan_file_text(result: PlacementPlan) -> str:
    """Plan file: budget and grouping for humans, plus a [placement] table
    a scenario can consume via [oltp] placement_file. Deterministic for a
    given plan, so reruns on the same stats are byte-identical."""
    names = plan_volume_names(result)
    q = json.dumps  # TOML basic strings share JSON's escapes
    lines = [
        "# Data placement plan. Point a scenario's [oltp] placement_file",
        "# here, or copy the [placement] table into its placement key.",
        "# Volumes are named by convention: wal, then data1..dataN.",
        "",
        "[budget]",
        f"vcpus = {result.budget.vcpus}",
        f"initial = {result.budget.initial}",
        f"maximum = {result.budget.maximum}",
        "",
        "[result]",
        f"kft_count = {result.kft_count}",
        f"cv = {float(result.cv)!r}",
    ]
    for g in result.groups:
        lines += [
            "",
            "[[groups]]",
            f"index = {g.index}",
            f"volume = {q(names[g.index])}",
            "tables = [" + ", ".join(q(t) for t in g.tables) + "]",
            f"score_sum = {float(g.score_sum)!r}",
        ]
        if g.note:
            lines.append(f"note = {q(g.note)}")
    mapping = {}
    for g in result.groups:
        for t in g.tables:
            mapping[t] = names[g.index]
    lines += ["", "[placement]"]
    lines += [f"{q(t)} = {q(mapping[t])}" for t in sorted(mapping)]
    lines += ["", "[scores]"]
    lines += [f"{q(t)} = {float(result.scores[t])!r}" for t in sorted(result.scores)]
    return "\n".join(lines) + "\n"


def write_plan_file(result: PlacementPlan, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(plan_file_text(result))


def load_plan_placement(path) -> dict:
    """The [placement] table out of a plan file: table name -> volume name."""
    cfg, _ = load_toml(path)
    table = cfg.get("placement")
    if not isinstance(table, dict) or not table:
        raise ScenarioError(f"{path}: no [placement] table")
    for key, value in table.items():
        if not isinstance(value, str):
            raise ScenarioError(f"{path}: placement.{key} must be a volume name")
    return dict(table)


def _build_profile(d: dict, text: str) -> DeviceProfile:
    _check_keys(d, _DEVICE_KEYS, f"device {d.get('name', '?')!r}", text)
    if "name" not in d:
        raise ScenarioError("every [[devices]] entry needs a name")
    overrides = {}
    for key in _DEVICE_KEYS - {"name", "profile"}:
        if key in d:
            v = d[key]
            if key in _DEVICE_SIZE_KEYS:
                v = parse_size(v, f"device {d['name']}: {key}")
            overrides[key] = v
    if "profile" in d:
        stock = STOCK_PROFILES.get(d["profile"])
        if stock is None:
            raise ScenarioError(
                f"device {d['name']}: unknown profile {d['profile']!r}; "
                f"known: {', '.join(sorted(STOCK_PROFILES))}"
            )
        return replace(stock, **overrides) if overrides else stock
    if "base_latency_us" not in d or "internal_bandwidth" not in d:
        raise ScenarioError(
            f"device {d['name']}: without a profile, base_latency_us and "
            "internal_bandwidth are required"
        )
    return DeviceProfile(name=d["name"], **overrides)


def _build_mix(o: dict, text: str) -> OltpMix:
    overrides = {}
    if "clients" in o:
        overrides["clients"] = o["clients"]
    if "commit_rate" in o:
        overrides["commit_rate"] = float(o["commit_rate"])
    if "wal_write_size" in o:
        overrides["wal_write_size"] = parse_size(o["wal_write_size"], "oltp.wal_write_size")
    if "wal_segment_size" in o:
        overrides["wal_segment_size"] = parse_size(
            o["wal_segment_size"], "oltp.wal_segment_size"
        )
    if "checkpoint_interval_ms" in o:
        overrides["checkpoint_interval_us"] = int(o["checkpoint_interval_ms"] * 1000)
    if "read_scale" in o:
        overrides["read_scale"] = float(o["read_scale"])
    if "tables" in o:
        tables = []
        for t in o["tables"]:
            _check_keys(t, _TABLE_KEYS, f"oltp table {t.get('name', '?')!r}", text)
            tables.append(
                TableSpec(
                    name=t["name"],
                    size=parse_size(t["size"], f"table {t['name']}: size"),
                    write_pages_per_txn=float(t.get("write_pages_per_txn", 0.0)),
                    read_freq=float(t.get("read_freq", 0.0)),
                )
            )
        return OltpMix(name=o.get("mix", "custom"), tables=tuple(tables), **overrides)
    mix_name = o.get("mix", "tpcc-like-wh1000")
    if mix_name != "tpcc-like-wh1000":
        raise ScenarioError(f"unknown stock mix {mix_name!r} (or define [[oltp.tables]])")
    return tpcc_like_mix(**overrides)


def build_world(cfg: dict, text: str = "") -> World:
    """Construct a World from a parsed scenario. Raises ScenarioError on any
    unknown key or unbuildable reference; device/volume/file validation
    errors pass through as ValidationError."""
    _check_keys(cfg, _TOP_KEYS, "", text)
    sim = cfg.get("sim", {})
    _check_keys(sim, _SIM_KEYS, "[sim]", text)
    throttle = None
    if "throttle" in cfg:
        t = cfg["throttle"]
        _check_keys(t, _THROTTLE_KEYS, "[throttle]", text)
        throttle = ThrottleParams(
            background_ratio=t.get("background_ratio", 0.10),
            hard_ratio=t.get("hard_ratio", 0.20),
            max_pause_us=t.get("max_pause_ms", 200.0) * 1000.0,
        )
    world = World(
        seed=int(sim.get("seed", 0)),
        vcpus=int(sim.get("vcpus", 8)),
        memory=parse_size(sim.get("memory", 8 * GiB), "sim.memory"),
        duration_s=float(sim.get("duration_s", 10.0)),
        throttle=throttle,
    )
    for d in cfg.get("devices", []):
        world.add_device(d["name"], _build_profile(d, text))
    for v in cfg.get("volumes", []):
        _check_keys(v, _VOLUME_KEYS, f"volume {v.get('name', '?')!r}", text)
        if "name" not in v or "devices" not in v:
            raise ScenarioError("every [[volumes]] entry needs name and devices")
        for member in v["devices"]:
            if member not in world.devices:
                raise ScenarioError(
                    _anchored(
                        text,
                        member,
                        f"volume {v['name']}: unknown device {member!r}",
                    )
                )
        flusher = FlusherParams(
            wakeup_interval_us=int(v.get("flusher_interval_ms", 5000) * 1000),
            batch_budget=parse_size(v.get("flusher_budget", "32MB"), "flusher_budget"),
            max_merged_size=parse_size(
                v.get("flusher_max_merged", "1MB"), "flusher_max_merged"
            ),
        )
        world.add_volume(
            v["name"],
            v["devices"],
            chunk=parse_size(v.get("chunk", "512KB"), f"volume {v['name']}: chunk"),
            flusher=flusher,
        )
    for j in cfg.get("fio", []):
        _check_keys(j, _FIO_KEYS, f"fio job {j.get('name', '?')!r}", text)
        if "name" not in j or "volume" not in j:
            raise ScenarioError("every [[fio]] entry needs name and volume")
        if j["volume"] not in world.volumes:
            raise ScenarioError(
                _anchored(
                    text,
                    j["volume"],
                    f"fio job {j['name']}: unknown volume {j['volume']!r}",
                )
            )
        job = FioJob(
            name=j["name"],
            kind=j.get("kind", "write"),
            io_size=parse_size(j.get("io_size", "4KB"), f"fio {j['name']}: io_size"),
            threads=int(j.get("threads", 1)),
            direct=bool(j.get("direct", True)),
            duration_s=float(sim.get("duration_s", 10.0)),
            region_size=parse_size(
                j.get("region_size", "1GB"), f"fio {j['name']}: region_size"
            ),
        )
        world.add_fio(job, j["volume"])
    if "oltp" in cfg:
        o = cfg["oltp"]
        _check_keys(o, _OLTP_KEYS, "[oltp]", text)
        mix = _build_mix(o, text)
        if "placement_file" in o:
            if o.get("placement"):
                raise ScenarioError(
                    "[oltp] placement and placement_file are mutually exclusive"
                )
            placement = load_plan_placement(o["placement_file"])
        else:
            placement = dict(o.get("placement", {}))
        table_names = {t.name for t in mix.tables}
        for key in placement:
            if key not in table_names and key not in ("wal", "default"):
                raise ScenarioError(f"oltp placement: {key!r} is not a table")
        default = placement.pop("default", None)
        if default is not None:
            for t in mix.tables:
                placement.setdefault(t.name, default)
        for vol_name in placement.values():
            if vol_name not in world.volumes:
                raise ScenarioError(
                    _anchored(
                        text,
                        vol_name,
                        f"oltp placement: unknown volume {vol_name!r}",
                    )
                )
        world.add_oltp(mix, placement)
    return world


def apply_overrides(cfg: dict, pairs) -> dict:
    """--params key=value support: dotted paths into the scenario dict.
    Values parse as TOML literals when possible, else stay strings."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ScenarioError(f"--params needs key=value, got {pair!r}")
        path, raw = pair.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = cfg
        keys = path.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return cfg


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))


def write_timeline_csv(report: dict, path: str):
    rows = report.get("timeline", [])
    keys = sorted({k for row in rows for k in row} - {"t_s"})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + keys)
        for row in rows:
            w.writerow([row.get("t_s", "")] + [row.get(k, "") for k in keys])


def availability_report(params: AvailabilityParams) -> dict:
    from .placement import (
        partitioned_failure_probability,
        system_failure_probability,
        volume_failure_probability,
    )

    split = partitioned_failure_probability(
        params.block_failure_prob,
        params.replicas,
        params.total_blocks,
        params.volumes,
    )
    whole = system_failure_probability(
        params.block_failure_prob, params.replicas, params.total_blocks
    )
    scale = max(abs(split), abs(whole))
    return {
        "block_failure_prob": params.block_failure_prob,
        "replicas": params.replicas,
        "total_blocks": params.total_blocks,
        "volumes": params.volumes,
        "per_volume_failure_prob": volume_failure_probability(
            params.block_failure_prob,
            params.replicas,
            params.total_blocks,
            params.volumes,
        ),
        "partitioned_failure_prob": split,
        "unpartitioned_failure_prob": whole,
        "abs_delta": abs(split - whole),
        "rel_delta": abs(split - whole) / scale if scale else 0.0,
    }
