"""flushsim: a discrete-event model of buffered-I/O writeback on cloud
block storage, with a data-placement planner and an availability
calculator.

The simulator reproduces how high per-command latency, QoS token buckets,
a serial per-volume flusher thread, and fsync barriers interact: direct
small-block I/O starves on latency, buffered writeback survives by
merging, and a checkpoint burst on a shared volume can stall every commit
behind it. Placement splits hot tables across flusher-backed volume
groups under a vCPU budget; the availability side prices what that
spreading costs.
"""

from .engine import World, raid0_map
from .kernels import ACTIVE_LANE, KERNELS_COMPILED
from .placement import (
    AvailabilityParams,
    KftBudget,
    PlacementPlan,
    ScoreParams,
    coefficient_of_variation,
    initial_kft_count,
    normalize,
    partitioned_failure_probability,
    plan,
    score,
    system_failure_probability,
    table_scores,
    volume_failure_probability,
)
from .storage import (
    STOCK_PROFILES,
    DeviceProfile,
    IoCommand,
    ValidationError,
    closed_loop_throughput,
)
from .workload import FioJob, OltpMix, TableSpec, dirty_rate, table_stats, tpcc_like_mix
from .writeback import FlusherParams, ThrottleParams, throttle_delay

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_LANE",
    "AvailabilityParams",
    "DeviceProfile",
    "FioJob",
    "FlusherParams",
    "IoCommand",
    "KERNELS_COMPILED",
    "KftBudget",
    "OltpMix",
    "PlacementPlan",
    "STOCK_PROFILES",
    "ScoreParams",
    "TableSpec",
    "ThrottleParams",
    "ValidationError",
    "World",
    "closed_loop_throughput",
    "coefficient_of_variation",
    "dirty_rate",
    "initial_kft_count",
    "normalize",
    "partitioned_failure_probability",
    "plan",
    "raid0_map",
    "score",
    "system_failure_probability",
    "table_scores",
    "table_stats",
    "throttle_delay",
    "tpcc_like_mix",
    "volume_failure_probability",
    "__version__",
]
