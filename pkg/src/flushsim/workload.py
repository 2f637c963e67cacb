"""Workload descriptions: fio-style microbenchmark jobs and a closed-loop
OLTP mix (clients, tables, WAL, checkpointer)."""

from dataclasses import dataclass

from .storage import GiB, KiB, MiB, PAGE_SIZE, ValidationError

FIO_KINDS = ("write", "randwrite", "read", "randread")


@dataclass(frozen=True)
class FioJob:
    """One fio-like job: `threads` workers each issuing one I/O at a time
    against a private region of the target volume."""

    name: str
    kind: str = "write"
    io_size: int = 4 * KiB
    threads: int = 1
    direct: bool = True
    duration_s: float = 10.0
    region_size: int = 1 * GiB

    def __post_init__(self):
        problems = []
        if self.kind not in FIO_KINDS:
            problems.append(f"kind must be one of {FIO_KINDS}, got {self.kind!r}")
        if self.io_size <= 0:
            problems.append("io_size must be > 0")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if self.duration_s <= 0:
            problems.append("duration must be > 0")
        if self.region_size < self.io_size:
            problems.append("region_size must hold at least one I/O")
        if problems:
            raise ValidationError(problems)

    @property
    def sequential(self) -> bool:
        return self.kind in ("write", "read")

    @property
    def is_write(self) -> bool:
        return self.kind in ("write", "randwrite")


@dataclass(frozen=True)
class TableSpec:
    """One relation. write_pages_per_txn is the mean number of pages a
    transaction dirties here (fractional means a Bernoulli extra page);
    read_freq is the mean point reads per transaction."""

    name: str
    size: int
    write_pages_per_txn: float = 0.0
    read_freq: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.name:
            problems.append("table name must be non-empty")
        if self.size < PAGE_SIZE:
            problems.append(f"table {self.name}: size must be at least one page")
        if self.write_pages_per_txn < 0:
            problems.append(f"table {self.name}: write_pages_per_txn must be >= 0")
        if self.read_freq < 0:
            problems.append(f"table {self.name}: read_freq must be >= 0")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class OltpMix:
    """Closed-loop transactional workload. Each of `clients` sessions loops:
    think, dirty table pages, append to the WAL, fsync the WAL, commit.
    commit_rate is the aggregate target when storage is not the bottleneck;
    it sets the think time (clients / commit_rate)."""

    name: str
    tables: tuple
    clients: int = 32
    commit_rate: float = 1000.0
    wal_write_size: int = 16 * KiB
    wal_segment_size: int = 16 * MiB
    checkpoint_interval_us: int = 5_000_000
    read_scale: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.tables:
            problems.append("mix needs at least one table")
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            problems.append("table names must be unique")
        if self.clients < 1:
            problems.append("clients must be >= 1")
        if self.commit_rate < 0:
            problems.append("commit_rate must be >= 0")
        if self.wal_write_size <= 0:
            problems.append("wal_write_size must be > 0")
        if self.wal_segment_size < self.wal_write_size:
            problems.append("wal_segment_size must hold at least one record")
        if self.checkpoint_interval_us <= 0:
            problems.append("checkpoint_interval must be > 0")
        if self.read_scale < 0:
            problems.append("read_scale must be >= 0")
        if problems:
            raise ValidationError(problems)

    @property
    def pages_per_commit(self) -> float:
        return sum(t.write_pages_per_txn for t in self.tables)

    def table(self, name: str) -> TableSpec:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def table_stats(mix: OltpMix) -> dict:
    """Per-table (write_rate bytes/s, read_rate reads/s, size bytes) at the
    mix's nominal commit rate. This is what the placement planner consumes."""
    out = {}
    for t in mix.tables:
        out[t.name] = (
            mix.commit_rate * t.write_pages_per_txn * PAGE_SIZE,
            mix.commit_rate * t.read_freq,
            float(t.size),
        )
    return out


def dirty_rate(mix: OltpMix) -> float:
    """Mean bytes dirtied per second at the nominal commit rate, tables and
    WAL together. Useful for sizing memory against the throttle ratios."""
    return mix.commit_rate * (mix.pages_per_commit * PAGE_SIZE + mix.wal_write_size)


def tpcc_like_mix(**overrides) -> OltpMix:
    """A TPC-C shaped mix at roughly thousand-warehouse scale: two huge
    hot tables (stock, order_line), a few mid-size ones, and tiny
    contended ones (district, warehouse). item is read-only.

    write_pages_per_txn counts pages that become newly dirty per commit,
    net of in-cache re-dirtying: a hot page touched while already dirty
    adds no writeback work, so these are well below the raw page-touch
    counts of the transaction profile."""
    tables = (
        TableSpec("stock", 32 * GiB, write_pages_per_txn=0.420, read_freq=0.9),
        TableSpec("order_line", 24 * GiB, write_pages_per_txn=0.360, read_freq=0.4),
        TableSpec("customer", 20 * GiB, write_pages_per_txn=0.075, read_freq=0.8),
        TableSpec("orders", 6 * GiB, write_pages_per_txn=0.093, read_freq=0.3),
        TableSpec("history", 2 * GiB, write_pages_per_txn=0.030, read_freq=0.0),
        TableSpec("item", 1 * GiB, write_pages_per_txn=0.0, read_freq=1.2),
        TableSpec("new_order", 512 * MiB, write_pages_per_txn=0.075, read_freq=0.2),
        TableSpec("district", 16 * MiB, write_pages_per_txn=0.045, read_freq=0.6),
        TableSpec("warehouse", 16 * MiB, write_pages_per_txn=0.015, read_freq=0.5),
    )
    args = dict(
        name="tpcc-like-wh1000",
        tables=tables,
        clients=96,
        commit_rate=3600.0,
        wal_write_size=16 * KiB,
    )
    args.update(overrides)
    return OltpMix(**args)
