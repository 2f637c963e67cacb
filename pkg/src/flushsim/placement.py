"""Multi-volume data placement: score tables by I/O intensity, bin them
into flusher-backed volume groups under a vCPU-derived budget, and price
the availability cost of spreading data over more volumes.

Scores blend normalized write rate, read rate and size (0.5 / 0.3 / 0.2).
The write-ahead log always gets group 0 to itself: its latency sets commit
latency, so it must never share a flusher or a device queue with bulk data.
"""

import math
from dataclasses import dataclass

from .storage import ValidationError

WAL_GROUP_NOTE = "low-latency tier preferred"


@dataclass(frozen=True)
class ScoreParams:
    """Weights for the write/read/size blend and the balance threshold that
    stops the planner from adding groups."""

    write_weight: float = 0.5
    read_weight: float = 0.3
    size_weight: float = 0.2
    cv_threshold: float = 0.3

    def __post_init__(self):
        problems = []
        for field in ("write_weight", "read_weight", "size_weight"):
            if getattr(self, field) < 0:
                problems.append(f"{field} must be >= 0")
        if self.cv_threshold < 0:
            problems.append("cv_threshold must be >= 0")
        if problems:
            raise ValidationError(problems)


DEFAULT_SCORE_PARAMS = ScoreParams()


def normalize(values) -> list:
    """Min-max normalize to [0, 1]. A constant (or singleton) column carries
    no ranking information, so every entry maps to the midpoint 0.5."""
    values = list(values)
    if not values:
        return []
    lo = min(values)
    hi = max(values)
    if hi == lo:
        return [0.5] * len(values)
    span = hi - lo
    return [(v - lo) / span for v in values]


def score(
    write_norm: float,
    read_norm: float,
    size_norm: float,
    params: ScoreParams = DEFAULT_SCORE_PARAMS,
) -> float:
    return (
        params.write_weight * write_norm
        + params.read_weight * read_norm
        + params.size_weight * size_norm
    )


def table_scores(stats: dict, params: ScoreParams = DEFAULT_SCORE_PARAMS) -> dict:
    """stats: name -> (write_rate, read_rate, size). Returns name -> score,
    normalized across the given set."""
    names = list(stats)
    w = normalize([stats[n][0] for n in names])
    r = normalize([stats[n][1] for n in names])
    s = normalize([stats[n][2] for n in names])
    return {n: score(w[i], r[i], s[i], params) for i, n in enumerate(names)}


def coefficient_of_variation(values) -> float:
    values = list(values)
    mean = sum(values) / len(values)
    if mean == 0:
        return 0.0
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return math.sqrt(var) / mean


def initial_kft_count(vcpus: int) -> int:
    """Starting flusher-thread count for a host: small hosts get two (the
    log plus one data group), everything else starts at four."""
    if vcpus < 1:
        raise ValidationError(["vcpus must be >= 1"])
    return 2 if vcpus <= 4 else 4


@dataclass(frozen=True)
class KftBudget:
    """How many flusher threads (hence cache devices, hence volume groups)
    a host can afford. Each flusher burns a core when writeback is hot, so
    the maximum is a quarter of the vCPUs. On small hosts that maximum
    falls below the starting count; the start is then clamped down, but
    never below two, so the log can always be isolated."""

    vcpus: int
    initial: int
    maximum: int

    @classmethod
    def from_vcpus(cls, vcpus: int) -> "KftBudget":
        if vcpus < 1:
            raise ValidationError(["vcpus must be >= 1"])
        maximum = vcpus // 4
        initial = initial_kft_count(vcpus)
        if initial > maximum:
            initial = max(maximum, 2)
        return cls(vcpus=vcpus, initial=initial, maximum=maximum)

    @property
    def ceiling(self) -> int:
        return max(self.maximum, self.initial)


@dataclass(frozen=True)
class PlacementGroup:
    index: int
    tables: tuple
    score_sum: float
    note: str = ""


@dataclass(frozen=True)
class PlacementPlan:
    groups: tuple
    scores: dict
    cv: float
    budget: KftBudget

    @property
    def kft_count(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {
            "budget": {
                "vcpus": self.budget.vcpus,
                "initial": self.budget.initial,
                "maximum": self.budget.maximum,
            },
            "cv": self.cv,
            "groups": [
                {
                    "index": g.index,
                    "tables": list(g.tables),
                    "score_sum": g.score_sum,
                    "note": g.note,
                }
                for g in self.groups
            ],
            "kft_count": self.kft_count,
            "scores": dict(sorted(self.scores.items())),
        }


def assign_bins(scores: dict, bin_count: int):
    """Greedy balance: tables in descending score order (name ascending on
    ties) each go to the bin with the lowest running score sum (lowest
    index on ties). Returns (list of table-name lists, list of sums)."""
    bins = [[] for _ in range(bin_count)]
    sums = [0.0] * bin_count
    for name in sorted(scores, key=lambda n: (-scores[n], n)):
        target = min(range(bin_count), key=lambda i: sums[i])
        bins[target].append(name)
        sums[target] += scores[name]
    return bins, sums


def plan(
    stats: dict, vcpus: int, params: ScoreParams = DEFAULT_SCORE_PARAMS
) -> PlacementPlan:
    """Produce a placement for the given table stats on a host with `vcpus`
    cores. Starts at the budget's initial group count and adds data groups
    while the bins stay lopsided (CV above the threshold) and budget
    remains."""
    if not stats:
        raise ValidationError(["no tables to place"])
    budget = KftBudget.from_vcpus(vcpus)
    scores = table_scores(stats, params)
    group_count = budget.initial
    while True:
        bins, sums = assign_bins(scores, group_count - 1)
        cv = coefficient_of_variation(sums)
        if cv <= params.cv_threshold or group_count >= budget.ceiling:
            break
        group_count += 1
    groups = [PlacementGroup(0, ("wal",), 0.0, note=WAL_GROUP_NOTE)]
    for i, (names, s) in enumerate(zip(bins, sums), start=1):
        groups.append(PlacementGroup(i, tuple(names), s))
    return PlacementPlan(groups=tuple(groups), scores=scores, cv=cv, budget=budget)


@dataclass(frozen=True)
class AvailabilityParams:
    """Loss model for capacity split across virtual volumes on distributed
    storage. Failures happen per replicated block, not per volume: a volume
    of n blocks dies when any of its blocks loses all copies. Splitting the
    same capacity into more volumes therefore cannot change the system loss
    probability; the calculator exists to demonstrate exactly that."""

    block_failure_prob: float
    replicas: int = 1
    total_blocks: int = 1
    volumes: int = 1

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.block_failure_prob <= 1.0:
            problems.append("block_failure_prob must be in [0, 1]")
        if self.replicas < 1:
            problems.append("replicas must be >= 1")
        if self.total_blocks < 1:
            problems.append("total_blocks must be >= 1")
        if self.volumes < 1:
            problems.append("volumes must be >= 1")
        elif self.total_blocks >= 1 and self.total_blocks % self.volumes:
            problems.append("volumes must divide total_blocks evenly")
        if problems:
            raise ValidationError(problems)


def system_failure_probability(p: float, replicas: int, total_blocks) -> float:
    """P(any block loses all replicas) = 1 - (1 - p^r)^B, computed in log
    space so tiny p and huge B stay exact. Volume count does not appear:
    it cancels algebraically."""
    loss = p**replicas
    if loss >= 1.0:
        return 1.0
    return -math.expm1(total_blocks * math.log1p(-loss))


def volume_failure_probability(
    p: float, replicas: int, total_blocks, volumes: int
) -> float:
    """Loss probability for one volume holding total_blocks/volumes blocks."""
    return system_failure_probability(p, replicas, total_blocks / volumes)


def partitioned_failure_probability(
    p: float, replicas: int, total_blocks, volumes: int
) -> float:
    """System loss computed the long way round: per-volume loss first, then
    composed across volumes. Forcing the per-volume value through a float
    is the point; agreement with the closed form shows the volume count
    really does cancel rather than being assumed away."""
    per_volume = volume_failure_probability(p, replicas, total_blocks, volumes)
    if per_volume >= 1.0:
        return 1.0
    return -math.expm1(volumes * math.log1p(-per_volume))
