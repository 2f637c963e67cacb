"""Buffered-writeback model: page-cache dirty state, I/O-less dirty
throttling, per-vCPU I/O queues with block-level merging, and the flusher
parameters.

The pieces here are deliberately mechanical; the event wiring lives in
the engine. Dirty state is byte-exact so the conservation invariant
(dirtied == flushed + residual) can be asserted as integers.
"""

from collections import deque
from dataclasses import dataclass, field

from .kernels import ExtentMap
from .storage import MiB, PAGE_SIZE, IoCommand, ValidationError


@dataclass(frozen=True)
class ThrottleParams:
    """I/O-less dirty throttling: writers sleep, they do not submit I/O.
    The delay ramps linearly from 0 at background_ratio to max_pause at
    hard_ratio and stays there (write stall)."""

    background_ratio: float = 0.10
    hard_ratio: float = 0.20
    max_pause_us: float = 200_000.0

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.background_ratio < self.hard_ratio <= 1.0:
            problems.append("throttle ratios must satisfy 0 <= background < hard <= 1")
        if self.max_pause_us <= 0:
            problems.append("max_pause must be > 0")
        if problems:
            raise ValidationError(problems)


def throttle_delay(params: ThrottleParams, dirty_bytes: int, total_memory: int) -> float:
    """Writer-side pause in float microseconds for the current dirty ratio."""
    ratio = dirty_bytes / total_memory
    if ratio <= params.background_ratio:
        return 0.0
    if ratio >= params.hard_ratio:
        return params.max_pause_us
    span = params.hard_ratio - params.background_ratio
    return params.max_pause_us * (ratio - params.background_ratio) / span


@dataclass(frozen=True)
class FlusherParams:
    """Kernel flusher thread knobs. One flusher exists per cache device
    (a plain volume or a whole RAID group), wakes periodically, and keeps
    at most one submission in flight."""

    wakeup_interval_us: int = 5_000_000
    batch_budget: int = 32 * MiB
    max_merged_size: int = 1 * MiB

    def __post_init__(self):
        problems = []
        if self.wakeup_interval_us <= 0:
            problems.append("wakeup_interval must be > 0")
        if self.batch_budget < PAGE_SIZE:
            problems.append("batch_budget must be at least one page")
        if self.max_merged_size < PAGE_SIZE or self.max_merged_size % PAGE_SIZE:
            problems.append("max_merged_size must be a positive page multiple")
        if problems:
            raise ValidationError(problems)


class IoQueue:
    """One none-scheduler software queue: strict arrival order, plus
    block-level merge of contiguous same-kind commands. Contiguity is
    tracked with start/end offset maps so a merge walk is O(chain), not
    O(queue)."""

    def __init__(self, index: int):
        self.index = index
        self._pending = deque()
        self._by_start = {}
        self._by_end = {}
        self.alive = 0

    def __len__(self):
        return self.alive

    def push(self, cmd: IoCommand):
        cmd.in_queue = True
        self._pending.append(cmd)
        self._by_start[(cmd.kind, cmd.offset)] = cmd
        self._by_end[(cmd.kind, cmd.offset + cmd.size)] = cmd
        self.alive += 1

    def _unlink(self, cmd: IoCommand):
        cmd.in_queue = False
        self.alive -= 1
        s_key = (cmd.kind, cmd.offset)
        e_key = (cmd.kind, cmd.offset + cmd.size)
        if self._by_start.get(s_key) is cmd:
            del self._by_start[s_key]
        if self._by_end.get(e_key) is cmd:
            del self._by_end[e_key]

    def peek(self):
        """Head command, discarding entries consumed by earlier merges."""
        pending = self._pending
        while pending and not pending[0].in_queue:
            pending.popleft()
        return pending[0] if pending else None

    def preview_merged_size(self, max_merged_size: int) -> int:
        """Size the head would reach if merged now; no mutation."""
        head = self.peek()
        if head is None:
            return 0
        kind = head.kind
        lo = head.offset
        hi = head.offset + head.size
        size = head.size
        while size < max_merged_size:
            nxt = self._by_start.get((kind, hi))
            if nxt is None or not nxt.in_queue or size + nxt.size > max_merged_size:
                break
            hi += nxt.size
            size += nxt.size
        while size < max_merged_size:
            prv = self._by_end.get((kind, lo))
            if prv is None or not prv.in_queue or size + prv.size > max_merged_size:
                break
            lo = prv.offset
            size += prv.size
        return size

    def pop_merged(self, max_merged_size: int):
        """Remove the head and every queued same-kind command contiguous with
        the growing range (regardless of arrival position), up to
        max_merged_size. Returns the resulting command; merged_count is the
        total number of original requests it carries."""
        head = self.peek()
        if head is None:
            return None
        self._unlink(head)
        parts = [head]
        kind = head.kind
        lo = head.offset
        hi = head.offset + head.size
        size = head.size
        while size < max_merged_size:
            nxt = self._by_start.get((kind, hi))
            if nxt is None or not nxt.in_queue or size + nxt.size > max_merged_size:
                break
            self._unlink(nxt)
            parts.append(nxt)
            hi += nxt.size
            size += nxt.size
        while size < max_merged_size:
            prv = self._by_end.get((kind, lo))
            if prv is None or not prv.in_queue or size + prv.size > max_merged_size:
                break
            self._unlink(prv)
            parts.append(prv)
            lo = prv.offset
            size += prv.size
        if len(parts) == 1:
            return head
        merged = IoCommand(
            kind=kind,
            offset=lo,
            size=size,
            merged_count=sum(p.merged_count for p in parts),
            vcpu=head.vcpu,
            origin=head.origin,
            enqueued_us=head.enqueued_us,
        )
        merged.constituents = parts
        return merged


def try_merge(queue: IoQueue, max_merged_size: int):
    """Dequeue the head of `queue`, coalesced with whatever is contiguous."""
    return queue.pop_merged(max_merged_size)


class File:
    """Page-cache view of one file, laid out at a fixed base offset of its
    volume. Extents are in file coordinates.

    fsync is serialized per file: one barrier batch in flight, later calls
    queue as waiters and are satisfied by the next batch (group commit).
    run_seq stamps every submitted writeback run so a barrier can tell
    pre-existing runs from ones submitted after it was armed."""

    __slots__ = (
        "fid",
        "name",
        "volume",
        "base",
        "size",
        "dirty",
        "writeback",
        "first_dirty_us",
        "outstanding",
        "run_seq",
        "fsync_active",
        "fsync_seq",
        "fsync_pending",
        "fsync_callbacks",
        "fsync_waiters",
        "wal_cursor",
    )

    def __init__(self, fid: int, name: str, volume, base: int, size: int):
        self.fid = fid
        self.name = name
        self.volume = volume
        self.base = base
        self.size = size
        self.dirty = ExtentMap()
        self.writeback = ExtentMap()
        self.first_dirty_us = 0
        self.outstanding = 0  # writeback runs in flight for this file
        self.run_seq = 0
        self.fsync_active = False
        self.fsync_seq = 0
        self.fsync_pending = 0
        self.fsync_callbacks = []
        self.fsync_waiters = []
        self.wal_cursor = 0


class PageCache:
    """Dirty/writeback accounting across all files. Pressure (what the
    throttle ramp sees) counts dirty plus writeback bytes, like the kernel
    does."""

    def __init__(self):
        self.files = []
        self.dirty_total = 0
        self.writeback_total = 0
        self.dirtied_cum = 0
        self.flushed_cum = 0
        self.peak_pressure = 0

    def register(self, file: File):
        self.files.append(file)

    def pressure(self) -> int:
        return self.dirty_total + self.writeback_total

    def add_dirty(self, file: File, start: int, end: int, now_us: int) -> int:
        was_empty = file.dirty.total() == 0
        new = file.dirty.add(start, end)
        if new:
            if was_empty:
                file.first_dirty_us = now_us
            self.dirty_total += new
            self.dirtied_cum += new
            p = self.pressure()
            if p > self.peak_pressure:
                self.peak_pressure = p
        return new

    def note_submitted(self, file: File, start: int, end: int):
        file.writeback.add(start, end)
        self.dirty_total -= end - start
        self.writeback_total += end - start

    def note_completed(self, file: File, start: int, end: int):
        file.writeback.subtract(start, end)
        self.writeback_total -= end - start
        self.flushed_cum += end - start

    def residual(self) -> int:
        return self.dirty_total + self.writeback_total


def buffered_write(
    cache: PageCache,
    params: ThrottleParams,
    total_memory: int,
    file: File,
    offset: int,
    length: int,
    now_us: int,
) -> float:
    """Dirty [offset, offset+length) of `file` and return the writer-side
    throttle delay (float us) the caller must sleep before continuing. The
    delay is computed against the pre-write pressure, matching a writer
    that pauses after noticing dirty excess."""
    delay = throttle_delay(params, cache.pressure(), total_memory)
    cache.add_dirty(file, offset, offset + length, now_us)
    return delay
