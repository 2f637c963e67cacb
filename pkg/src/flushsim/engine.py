"""Discrete-event core.

Time is integer microseconds. A World holds block devices (per-vCPU
software queues feeding a token-bucket admission gate), volumes (optionally
striped over several devices, each volume owning exactly one flusher), one
shared page cache, and workload drivers. Everything a run produces lands in
a plain-dict report whose JSON form is byte-stable for a given seed.

Submission granularity matters here: buffered writeback enters the block
layer as page-sized requests so contiguous runs coalesce in the queue,
while direct I/O passes through at the caller's size. That asymmetry is
what makes buffered small-block sequential writes outrun direct ones.
"""

import heapq

from .kernels import exp_interval, quantize_us, rng_stream
from .storage import (
    GiB,
    KiB,
    MiB,
    PAGE_SIZE,
    READ,
    WRITE,
    IoCommand,
    ValidationError,
    qos_state_for,
    service_time,
)
from .workload import FioJob, OltpMix
from .writeback import (
    File,
    FlusherParams,
    IoQueue,
    PageCache,
    ThrottleParams,
    throttle_delay,
)

# Queue-level merge cap, the usual block-layer max request size.
BLOCK_MAX_MERGED = 1 * MiB

# Application-side copy cost for buffered writes (bytes per us). Keeps
# cache-speed writers from spinning inside one microsecond.
APP_COPY_BYTES_PER_US = 10240.0

WAL_KEY = "wal"


class EventLoop:
    """Binary-heap event loop: (time_us, seq, fn, arg). seq keeps same-instant
    events in schedule order, so runs replay identically."""

    __slots__ = ("now", "_heap", "_seq")

    def __init__(self):
        self.now = 0
        self._heap = []
        self._seq = 0

    def at(self, t_us: int, fn, arg=None):
        if t_us < self.now:
            t_us = self.now
        self._seq += 1
        heapq.heappush(self._heap, (t_us, self._seq, fn, arg))

    def run_until(self, horizon_us: int):
        heap = self._heap
        while heap and heap[0][0] <= horizon_us:
            t, _, fn, arg = heapq.heappop(heap)
            self.now = t
            fn(arg)
        self.now = horizon_us


class OriginStats:
    __slots__ = ("requests", "bytes", "wait_us", "depth_sum", "depth_samples")

    def __init__(self):
        self.requests = 0
        self.bytes = 0
        self.wait_us = 0
        self.depth_sum = 0
        self.depth_samples = 0


class DeviceStats:
    """Per-device counters. requests are what workloads submitted, commands
    are what dispatch sent after merging; the gap is the merge rate."""

    __slots__ = (
        "write_requests",
        "write_commands",
        "read_requests",
        "read_commands",
        "bytes_written",
        "bytes_read",
        "wait_us",
        "depth_area",
        "_depth",
        "_depth_t",
        "origins",
    )

    def __init__(self):
        self.write_requests = 0
        self.write_commands = 0
        self.read_requests = 0
        self.read_commands = 0
        self.bytes_written = 0
        self.bytes_read = 0
        self.wait_us = 0
        self.depth_area = 0
        self._depth = 0
        self._depth_t = 0
        self.origins = {}

    def origin(self, name: str) -> OriginStats:
        o = self.origins.get(name)
        if o is None:
            o = self.origins[name] = OriginStats()
        return o

    def _advance(self, now: int):
        self.depth_area += self._depth * (now - self._depth_t)
        self._depth_t = now

    def note_queued(self, now: int, n: int):
        self._advance(now)
        self._depth += n

    def note_dispatched(self, now: int, cmd: IoCommand, parts):
        self._advance(now)
        self._depth -= len(parts)
        for p in parts:
            wait = now - p.enqueued_us
            self.wait_us += wait
            o = self.origin(p.origin)
            o.wait_us += wait

    def note_completed(self, cmd: IoCommand, parts):
        if cmd.kind == WRITE:
            self.write_commands += 1
            self.write_requests += cmd.merged_count
            self.bytes_written += cmd.size
        else:
            self.read_commands += 1
            self.read_requests += cmd.merged_count
            self.bytes_read += cmd.size
        for p in parts:
            o = self.origin(p.origin)
            o.requests += p.merged_count
            o.bytes += p.size

    def sample_depth(self, origin: str, depth: int):
        o = self.origin(origin)
        o.depth_sum += depth
        o.depth_samples += 1

    def close(self, now: int):
        self._advance(now)

    def merge_rate(self) -> float:
        if self.write_requests == 0:
            return 0.0
        return 1.0 - self.write_commands / self.write_requests

    def mean_write_command_bytes(self) -> float:
        if self.write_commands == 0:
            return 0.0
        return self.bytes_written / self.write_commands


class BlockDevice:
    """One physical device: min(vcpus, hw_queue_count) FIFO queues with
    merging, a shared admission gate, and concurrent service whose latency
    amortizes with in-service depth. Admission happens at dispatch, so QoS
    backpressure shows up as queue depth, which is what opens merge windows.
    """

    def __init__(self, world, name: str, profile):
        self.world = world
        self.name = name
        self.profile = profile
        n = max(1, min(world.vcpus, profile.hw_queue_count))
        self.queues = [IoQueue(i) for i in range(n)]
        self.gate = qos_state_for(profile)
        self.rng = rng_stream(world.seed, "svc:" + name)
        self.in_service = 0
        self._retry_armed = [False] * n
        self.stats = DeviceStats()

    def queue_for(self, vcpu: int) -> IoQueue:
        return self.queues[vcpu % len(self.queues)]

    def enqueue(self, cmd: IoCommand, plugged: bool = False) -> IoQueue:
        """Queue one command. A plugged enqueue defers dispatch so commands
        submitted together can merge; the submitter must kick() each touched
        queue afterwards."""
        cmd.enqueued_us = self.world.loop.now
        q = self.queue_for(cmd.vcpu)
        self.stats.note_queued(cmd.enqueued_us, 1)
        q.push(cmd)
        if not plugged and not self._retry_armed[q.index]:
            self._dispatch(q)
        return q

    def kick(self, q: IoQueue):
        if not self._retry_armed[q.index]:
            self._dispatch(q)

    def _dispatch(self, q: IoQueue):
        loop = self.world.loop
        while True:
            head = q.peek()
            if head is None:
                return
            size = q.preview_merged_size(BLOCK_MAX_MERGED)
            now = loop.now
            t = self.gate.admit_at(float(now), float(size))
            if t > now:
                self._retry_armed[q.index] = True
                loop.at(max(now + 1, quantize_us(t)), self._retry, q)
                return
            cmd = q.pop_merged(BLOCK_MAX_MERGED)
            self.gate.consume(float(now), float(cmd.size))
            parts = getattr(cmd, "constituents", None) or (cmd,)
            self.stats.note_dispatched(now, cmd, parts)
            self.in_service += 1
            svc = service_time(self.profile, cmd, self.rng, self.in_service)
            loop.at(now + quantize_us(svc), self._complete, cmd)

    def _retry(self, q: IoQueue):
        self._retry_armed[q.index] = False
        self._dispatch(q)

    def _complete(self, cmd: IoCommand):
        self.in_service -= 1
        parts = getattr(cmd, "constituents", None) or (cmd,)
        self.stats.note_completed(cmd, parts)
        world = self.world
        for p in parts:
            if p.on_complete is not None:
                p.on_complete(world, p)


def raid0_map(offset: int, size: int, chunk: int, members: int):
    """Split a logical range into (member, member_offset, size) pieces under
    RAID-0 striping. members == 1 short-circuits to identity."""
    if members == 1:
        return [(0, offset, size)]
    out = []
    while size > 0:
        stripe = offset // chunk
        within = offset - stripe * chunk
        take = min(chunk - within, size)
        out.append((stripe % members, (stripe // members) * chunk + within, take))
        offset += take
        size -= take
    return out


class WriteRun:
    """One writeback submission for one file: a set of extents that went to
    the queues together. The page cache is cleared and barriers notified
    when the last piece lands."""

    __slots__ = ("file", "extents", "remaining", "seq", "on_done")

    def __init__(self, file, extents, seq, on_done):
        self.file = file
        self.extents = extents
        self.remaining = 0
        self.seq = seq
        self.on_done = on_done


class Volume:
    """A logical block device: one or more member devices striped RAID-0,
    one flusher, and the files living on it. The flusher keeps a single
    chunk in flight; that serialization is the drain-rate ceiling."""

    def __init__(self, world, name, members, chunk, flusher, flusher_vcpu):
        if chunk < PAGE_SIZE or chunk % PAGE_SIZE:
            raise ValidationError([f"volume {name}: chunk must be a page multiple"])
        self.world = world
        self.name = name
        self.members = members
        self.chunk = chunk
        self.flusher = flusher
        self.flusher_vcpu = flusher_vcpu
        self.capacity = sum(m.profile.capacity for m in members)
        self.files = []
        self._next_base = 0
        self._busy = False
        self._budget_left = 0
        self._tick_start = 0
        self._timer_gen = 0

    # -- layout -----------------------------------------------------------

    def add_file(self, name: str, size: int) -> File:
        align = self.chunk if len(self.members) > 1 else MiB
        base = (self._next_base + align - 1) // align * align
        if base + size > self.capacity:
            raise ValidationError([f"volume {self.name}: out of capacity for {name}"])
        f = File(self.world.next_fid(), name, self, base, size)
        self._next_base = base + size
        self.files.append(f)
        self.world.cache.register(f)
        return f

    def _map_page(self, abs_off: int):
        m = len(self.members)
        if m == 1:
            return self.members[0], abs_off
        stripe = abs_off // self.chunk
        return (
            self.members[stripe % m],
            (stripe // m) * self.chunk + (abs_off - stripe * self.chunk),
        )

    # -- writeback submission ----------------------------------------------

    def submit_writeback(self, file: File, extents, origin: str, vcpu: int, on_done=None):
        """Issue page-sized write requests for `extents` of `file` as one
        run. Pages of one extent are contiguous on the volume, so the queue
        coalesces them back into large commands."""
        file.run_seq += 1
        run = WriteRun(file, extents, file.run_seq, on_done)
        file.outstanding += 1
        pieces = []
        for s, e in extents:
            self.world.cache.note_submitted(file, s, e)
            off = file.base + s
            while off < file.base + e:
                dev, m_off = self._map_page(off)
                pieces.append(
                    (
                        dev,
                        IoCommand(
                            kind=WRITE,
                            offset=m_off,
                            size=PAGE_SIZE,
                            vcpu=vcpu,
                            origin=origin,
                            on_complete=self._piece_done(run),
                        ),
                    )
                )
                off += PAGE_SIZE
        run.remaining = len(pieces)
        first_dev = pieces[0][0]
        first_dev.stats.sample_depth(origin, len(first_dev.queue_for(vcpu)))
        touched = []
        for dev, cmd in pieces:
            q = dev.enqueue(cmd, plugged=True)
            if (dev, q) not in touched:
                touched.append((dev, q))
        for dev, q in touched:
            dev.kick(q)
        return run

    def _piece_done(self, run: WriteRun):
        def done(world, cmd):
            run.remaining -= 1
            if run.remaining == 0:
                f = run.file
                for s, e in run.extents:
                    world.cache.note_completed(f, s, e)
                f.outstanding -= 1
                if f.fsync_active and run.seq <= f.fsync_seq:
                    f.fsync_pending -= 1
                    if f.fsync_pending == 0:
                        world._fsync_batch_done(f)
                if run.on_done is not None:
                    run.on_done()

        return done

    def submit_direct(self, file: File, kind, off: int, size: int, origin, vcpu, on_done):
        """Pass-through I/O at the caller's granularity (no page cache)."""
        pieces = raid0_map(file.base + off, size, self.chunk, len(self.members))
        state = [len(pieces)]

        def done(world, cmd):
            state[0] -= 1
            if state[0] == 0 and on_done is not None:
                on_done()

        first_dev = self.members[pieces[0][0]]
        first_dev.stats.sample_depth(origin, len(first_dev.queue_for(vcpu)))
        touched = []
        for idx, m_off, m_size in pieces:
            dev = self.members[idx]
            q = dev.enqueue(
                IoCommand(
                    kind=kind,
                    offset=m_off,
                    size=m_size,
                    vcpu=vcpu,
                    origin=origin,
                    on_complete=done,
                ),
                plugged=True,
            )
            if (dev, q) not in touched:
                touched.append((dev, q))
        for dev, q in touched:
            dev.kick(q)

    # -- flusher ------------------------------------------------------------

    def arm_flusher(self, t_us: int):
        self._timer_gen += 1
        self.world.loop.at(t_us, self._flusher_timer, self._timer_gen)

    def _flusher_timer(self, gen: int):
        if gen != self._timer_gen or self._busy:
            return
        self.flusher_tick()

    def _pick_file(self):
        best = None
        for f in self.files:
            if f.dirty:
                if best is None or (f.first_dirty_us, f.fid) < (
                    best.first_dirty_us,
                    best.fid,
                ):
                    best = f
        return best

    def flusher_tick(self):
        if self._busy:
            return
        self._busy = True
        self._tick_start = self.world.loop.now
        self._budget_left = self.flusher.batch_budget
        self._flush_next_chunk()

    def _flush_next_chunk(self):
        world = self.world
        file = self._pick_file() if self._budget_left > 0 else None
        if file is None:
            self._busy = False
            cache = world.cache
            pressured = cache.pressure() > world.throttle.background_ratio * world.memory
            if pressured and self._pick_file() is not None:
                self.flusher_tick()
            else:
                self.arm_flusher(
                    max(world.loop.now, self._tick_start + self.flusher.wakeup_interval_us)
                )
            return
        s, e = file.dirty.pop_chunk(min(self._budget_left, self.flusher.max_merged_size))
        self._budget_left -= e - s
        self.submit_writeback(
            file,
            [(s, e)],
            origin="flusher",
            vcpu=self.flusher_vcpu,
            on_done=self._flush_next_chunk,
        )


class OltpStats:
    __slots__ = (
        "commits",
        "latency_sum_us",
        "latency_max_us",
        "fsync_batches",
        "reads_issued",
        "reads_completed",
        "txns_started",
    )

    def __init__(self):
        self.commits = 0
        self.latency_sum_us = 0
        self.latency_max_us = 0
        self.fsync_batches = 0
        self.reads_issued = 0
        self.reads_completed = 0
        self.txns_started = 0


class OltpDriver:
    """Closed-loop transactional clients plus a periodic checkpointer and
    optional open-loop point readers. Commit durability rides on fsync of
    the log file; its per-file serialization is what turns concurrent
    commits into batches."""

    def __init__(self, world, mix: OltpMix, placement: dict):
        self.world = world
        self.mix = mix
        self.stats = OltpStats()
        try:
            wal_volume = world.volumes[placement[WAL_KEY]]
        except KeyError:
            raise ValidationError(["oltp placement must map 'wal' to a volume"])
        self.wal_file = wal_volume.add_file("wal", mix.wal_segment_size)
        self.table_files = {}
        for t in mix.tables:
            if t.name not in placement:
                raise ValidationError([f"oltp placement missing table {t.name}"])
            vol = world.volumes[placement[t.name]]
            self.table_files[t.name] = vol.add_file(t.name, t.size)
        self._think_rngs = [
            rng_stream(world.seed, f"think:{k}") for k in range(mix.clients)
        ]
        self._page_rng = rng_stream(world.seed, "pages")
        self._read_rng = rng_stream(world.seed, "reads")
        self._txn_start = [0] * mix.clients
        self._read_weights = []
        acc = 0.0
        for t in mix.tables:
            acc += t.read_freq
            self._read_weights.append((acc, t.name))
        self._read_total = acc
        self._next_read_vcpu = 0

    def start(self):
        if self.mix.commit_rate <= 0:
            return
        think_mean = self.mix.clients / self.mix.commit_rate * 1e6
        loop = self.world.loop
        for k in range(self.mix.clients):
            loop.at(
                quantize_us(exp_interval(self._think_rngs[k], think_mean)),
                self._txn,
                k,
            )
        loop.at(self.mix.checkpoint_interval_us, self._checkpoint, None)
        read_rate = self.mix.commit_rate * self._read_total * self.mix.read_scale
        if read_rate > 0:
            self._read_mean_us = 1e6 / read_rate
            loop.at(
                quantize_us(exp_interval(self._read_rng, self._read_mean_us)),
                self._read,
                None,
            )

    # -- transactions -------------------------------------------------------

    def _txn(self, k: int):
        world = self.world
        now = world.loop.now
        if now >= world.duration_us:
            return
        self.stats.txns_started += 1
        self._txn_start[k] = now
        rng = self._page_rng
        delay = 0.0
        for t in self.mix.tables:
            whole = int(t.write_pages_per_txn)
            frac = t.write_pages_per_txn - whole
            pages = whole + (1 if frac > 0 and rng.next_unit() < frac else 0)
            if pages == 0:
                continue
            f = self.table_files[t.name]
            npages = t.size // PAGE_SIZE
            for _ in range(pages):
                off = rng.next_below(npages) * PAGE_SIZE
                delay += world.buffered_write(f, off, PAGE_SIZE)
        rec = self.mix.wal_write_size
        wal = self.wal_file
        if wal.wal_cursor + rec > self.mix.wal_segment_size:
            wal.wal_cursor = 0
        delay += world.buffered_write(wal, wal.wal_cursor, rec)
        wal.wal_cursor += rec
        if delay > 0:
            world.loop.at(now + quantize_us(delay), self._fsync_point, k)
        else:
            self._fsync_point(k)

    def _fsync_point(self, k: int):
        self.world.fsync(
            self.wal_file,
            vcpu=k % self.world.vcpus,
            origin=WAL_KEY,
            callback=lambda k=k: self._commit(k),
        )

    def _commit(self, k: int):
        now = self.world.loop.now
        lat = now - self._txn_start[k]
        st = self.stats
        st.commits += 1
        st.latency_sum_us += lat
        if lat > st.latency_max_us:
            st.latency_max_us = lat
        think_mean = self.mix.clients / self.mix.commit_rate * 1e6
        self.world.loop.at(
            now + quantize_us(exp_interval(self._think_rngs[k], think_mean)),
            self._txn,
            k,
        )

    # -- checkpointer --------------------------------------------------------

    def _checkpoint(self, _):
        start = self.world.loop.now
        names = sorted(self.table_files)
        self._ckpt_step(start, names, 0)

    def _ckpt_step(self, start: int, names, i: int):
        world = self.world
        if world.loop.now >= world.duration_us:
            return
        if i >= len(names):
            world.loop.at(
                max(world.loop.now, start + self.mix.checkpoint_interval_us),
                self._checkpoint,
                None,
            )
            return
        world.fsync(
            self.table_files[names[i]],
            vcpu=0,
            origin="checkpoint",
            callback=lambda: self._ckpt_step(start, names, i + 1),
        )

    # -- readers --------------------------------------------------------------

    def _read(self, _):
        world = self.world
        now = world.loop.now
        if now >= world.duration_us:
            return
        u = self._read_rng.next_unit() * self._read_total
        name = self._read_weights[-1][1]
        for acc, n in self._read_weights:
            if u < acc:
                name = n
                break
        f = self.table_files[name]
        off = self._read_rng.next_below(f.size // PAGE_SIZE) * PAGE_SIZE
        vcpu = self._next_read_vcpu = (self._next_read_vcpu + 1) % world.vcpus
        self.stats.reads_issued += 1

        def done():
            self.stats.reads_completed += 1

        f.volume.submit_direct(f, READ, off, PAGE_SIZE, "read", vcpu, done)
        world.loop.at(
            now + quantize_us(exp_interval(self._read_rng, self._read_mean_us)),
            self._read,
            None,
        )


class FioStats:
    __slots__ = ("issued_bytes", "completed_bytes", "completed_ops")

    def __init__(self):
        self.issued_bytes = 0
        self.completed_bytes = 0
        self.completed_ops = 0


class FioDriver:
    """fio-shaped microbenchmark: `threads` workers on one volume, each with
    a private file. Direct workers keep one I/O outstanding; buffered
    writers dirty the cache at copy speed minus throttle sleeps."""

    def __init__(self, world, job: FioJob, volume: Volume):
        self.world = world
        self.job = job
        self.volume = volume
        self.stats = FioStats()
        self.files = [
            volume.add_file(f"{job.name}.{i}", job.region_size)
            for i in range(job.threads)
        ]
        self._cursors = [0] * job.threads
        self._rngs = [
            rng_stream(world.seed, f"fio:{job.name}:{i}") for i in range(job.threads)
        ]

    def start(self):
        loop = self.world.loop
        for i in range(self.job.threads):
            loop.at(0, self._step, i)

    def _next_offset(self, i: int) -> int:
        job = self.job
        if job.sequential:
            off = self._cursors[i]
            nxt = off + job.io_size
            self._cursors[i] = 0 if nxt + job.io_size > job.region_size else nxt
            return off
        slots = job.region_size // job.io_size
        return self._rngs[i].next_below(slots) * job.io_size

    def _step(self, i: int):
        world = self.world
        now = world.loop.now
        if now >= world.duration_us:
            return
        job = self.job
        off = self._next_offset(i)
        f = self.files[i]
        self.stats.issued_bytes += job.io_size
        if job.direct or not job.is_write:
            kind = WRITE if job.is_write else READ

            def done():
                self.stats.completed_bytes += job.io_size
                self.stats.completed_ops += 1
                self._step(i)

            self.volume.submit_direct(
                f, kind, off, job.io_size, job.name, i % world.vcpus, done
            )
        else:
            delay = world.buffered_write(f, off, job.io_size)
            self.stats.completed_bytes += job.io_size
            self.stats.completed_ops += 1
            dt = delay + job.io_size / APP_COPY_BYTES_PER_US
            world.loop.at(now + max(1, quantize_us(dt)), self._step, i)


class World:
    """One simulation: clock, cache, devices, volumes, drivers, report."""

    def __init__(
        self,
        seed: int = 0,
        vcpus: int = 8,
        memory: int = 8 * GiB,
        duration_s: float = 10.0,
        throttle: ThrottleParams = None,
    ):
        if vcpus < 1:
            raise ValidationError(["vcpus must be >= 1"])
        if memory < 64 * MiB:
            raise ValidationError(["memory must be at least 64 MiB"])
        if duration_s < 0:
            raise ValidationError(["duration must be >= 0"])
        self.seed = seed
        self.vcpus = vcpus
        self.memory = memory
        self.duration_us = int(duration_s * 1e6)
        self.throttle = throttle or ThrottleParams()
        self._background_bytes = int(self.throttle.background_ratio * memory)
        self.loop = EventLoop()
        self.cache = PageCache()
        self.devices = {}
        self.volumes = {}
        self.fio_drivers = []
        self.oltp_driver = None
        self._fid = 0
        self.throttle_sleep_us = 0.0
        self.throttle_onset_us = -1
        self.timeline = []

    def next_fid(self) -> int:
        self._fid += 1
        return self._fid

    # -- construction -------------------------------------------------------

    def add_device(self, name: str, profile) -> BlockDevice:
        if name in self.devices:
            raise ValidationError([f"duplicate device {name}"])
        dev = BlockDevice(self, name, profile)
        self.devices[name] = dev
        return dev

    def add_volume(
        self,
        name: str,
        device_names,
        chunk: int = 512 * KiB,
        flusher: FlusherParams = None,
    ) -> Volume:
        if name in self.volumes:
            raise ValidationError([f"duplicate volume {name}"])
        members = []
        for d in device_names:
            if d not in self.devices:
                raise ValidationError([f"volume {name}: unknown device {d}"])
            members.append(self.devices[d])
        vol = Volume(
            self,
            name,
            members,
            chunk,
            flusher or FlusherParams(),
            flusher_vcpu=(1 + len(self.volumes)) % self.vcpus,
        )
        self.volumes[name] = vol
        return vol

    def add_fio(self, job: FioJob, volume: str) -> FioDriver:
        drv = FioDriver(self, job, self.volumes[volume])
        self.fio_drivers.append(drv)
        return drv

    def add_oltp(self, mix: OltpMix, placement: dict) -> OltpDriver:
        if self.oltp_driver is not None:
            raise ValidationError(["only one oltp driver per world"])
        self.oltp_driver = OltpDriver(self, mix, placement)
        return self.oltp_driver

    # -- cache-side write path ------------------------------------------------

    def buffered_write(self, file: File, offset: int, length: int) -> float:
        """Dirty pages and return the throttle sleep (float us) the writer
        owes. Ratio counts dirty plus writeback against total memory. A
        writer that pushes pressure past the background ratio wakes the
        target volume's flusher instead of waiting for its periodic tick."""
        delay = throttle_delay(self.throttle, self.cache.pressure(), self.memory)
        self.cache.add_dirty(file, offset, offset + length, self.loop.now)
        if delay > 0:
            self.throttle_sleep_us += delay
            if self.throttle_onset_us < 0:
                self.throttle_onset_us = self.loop.now
        if self.cache.pressure() > self._background_bytes and not file.volume._busy:
            file.volume.flusher_tick()
        return delay

    def fsync(self, file: File, vcpu: int, origin: str, callback):
        """Durability barrier on one file. Serialized per file: a second
        fsync during an active one waits and is satisfied by the next
        batch, which covers everything dirtied up to its submission."""
        if file.fsync_active:
            file.fsync_waiters.append((vcpu, origin, callback))
            return
        self._fsync_start_batch(file, [(vcpu, origin, callback)])

    def _fsync_start_batch(self, file: File, waiters):
        extents = file.dirty.take_all()
        if extents:
            file.volume.submit_writeback(file, extents, waiters[0][1], waiters[0][0])
            if self.oltp_driver is not None and file is self.oltp_driver.wal_file:
                self.oltp_driver.stats.fsync_batches += 1
        pending = file.outstanding
        if pending == 0:
            for _, _, cb in waiters:
                cb()
            if file.fsync_waiters:
                again = file.fsync_waiters
                file.fsync_waiters = []
                self._fsync_start_batch(file, again)
            return
        file.fsync_active = True
        file.fsync_seq = file.run_seq
        file.fsync_pending = pending
        file.fsync_callbacks = [cb for _, _, cb in waiters]

    def _fsync_batch_done(self, file: File):
        callbacks = file.fsync_callbacks
        file.fsync_active = False
        file.fsync_callbacks = []
        for cb in callbacks:
            cb()
        if file.fsync_waiters:
            again = file.fsync_waiters
            file.fsync_waiters = []
            self._fsync_start_batch(file, again)

    # -- run ---------------------------------------------------------------

    def _sample(self, _):
        now = self.loop.now
        row = {
            "t_s": now // 1_000_000,
            "dirty": self.cache.dirty_total,
            "writeback": self.cache.writeback_total,
        }
        for name, dev in self.devices.items():
            row[f"written:{name}"] = dev.stats.bytes_written
            row[f"read:{name}"] = dev.stats.bytes_read
        if self.oltp_driver is not None:
            row["commits"] = self.oltp_driver.stats.commits
        self.timeline.append(row)
        nxt = now + 1_000_000
        if nxt <= self.duration_us:
            self.loop.at(nxt, self._sample, None)

    def run(self) -> dict:
        if self.duration_us == 0:
            return self.report()
        for vol in self.volumes.values():
            vol.arm_flusher(vol.flusher.wakeup_interval_us)
        for drv in self.fio_drivers:
            drv.start()
        if self.oltp_driver is not None:
            self.oltp_driver.start()
        self.loop.at(1_000_000, self._sample, None)
        self.loop.run_until(self.duration_us)
        for dev in self.devices.values():
            dev.stats.close(self.duration_us)
        return self.report()

    # -- reporting ------------------------------------------------------------

    def report(self) -> dict:
        duration_s = self.duration_us / 1e6
        # Zero-length run: nothing moved, so rates are 0/1 rather than 0/0.
        rate_den = duration_s if duration_s > 0 else 1.0
        depth_den = self.duration_us if self.duration_us > 0 else 1
        cache = self.cache
        out = {
            "meta": {
                "seed": self.seed,
                "vcpus": self.vcpus,
                "memory": self.memory,
                "duration_s": duration_s,
            },
            "cache": {
                "dirtied": cache.dirtied_cum,
                "flushed": cache.flushed_cum,
                "residual_dirty": cache.dirty_total,
                "residual_writeback": cache.writeback_total,
                "peak_pressure": cache.peak_pressure,
                "conservation_ok": cache.dirtied_cum
                == cache.flushed_cum + cache.dirty_total + cache.writeback_total,
                "throttle_sleep_us": self.throttle_sleep_us,
                "throttle_onset_us": self.throttle_onset_us,
            },
            "devices": {},
            "volumes": {},
            "timeline": self.timeline,
        }
        for name, dev in self.devices.items():
            st = dev.stats
            origins = {}
            for oname, o in sorted(st.origins.items()):
                origins[oname] = {
                    "requests": o.requests,
                    "bytes": o.bytes,
                    "mean_wait_us": o.wait_us / o.requests if o.requests else 0.0,
                    "mean_enqueue_depth": (
                        o.depth_sum / o.depth_samples if o.depth_samples else 0.0
                    ),
                }
            out["devices"][name] = {
                "write_requests": st.write_requests,
                "write_commands": st.write_commands,
                "read_requests": st.read_requests,
                "read_commands": st.read_commands,
                "bytes_written": st.bytes_written,
                "bytes_read": st.bytes_read,
                "write_bytes_per_s": st.bytes_written / rate_den,
                "merge_rate": st.merge_rate(),
                "mean_write_command_bytes": st.mean_write_command_bytes(),
                "mean_queue_depth": st.depth_area / depth_den,
                "origins": origins,
            }
        for name, vol in self.volumes.items():
            written = sum(m.stats.bytes_written for m in vol.members)
            out["volumes"][name] = {
                "members": [m.name for m in vol.members],
                "bytes_written": written,
                "write_bytes_per_s": written / rate_den,
            }
        if self.fio_drivers:
            jobs = {}
            for drv in self.fio_drivers:
                st = drv.stats
                jobs[drv.job.name] = {
                    "issued_bytes": st.issued_bytes,
                    "completed_bytes": st.completed_bytes,
                    "completed_ops": st.completed_ops,
                    "app_bytes_per_s": st.completed_bytes / rate_den,
                }
            out["fio"] = jobs
        if self.oltp_driver is not None:
            st = self.oltp_driver.stats
            out["oltp"] = {
                "commits": st.commits,
                "txns_started": st.txns_started,
                "txn_rate_per_min": st.commits / rate_den * 60.0,
                "commit_latency_mean_us": (
                    st.latency_sum_us / st.commits if st.commits else 0.0
                ),
                "commit_latency_max_us": st.latency_max_us,
                "fsync_batches": st.fsync_batches,
                "group_commit_mean": (
                    st.commits / st.fsync_batches if st.fsync_batches else 0.0
                ),
                "reads_issued": st.reads_issued,
                "reads_completed": st.reads_completed,
            }
        return out
