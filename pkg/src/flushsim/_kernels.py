"""Hot kernels: PRNG, QoS token buckets, dirty-extent maps, closed-loop runs.

Written in Cython pure-Python mode: the same source runs interpreted or
compiled to an extension (see setup.py), so both lanes are bit-identical
by construction. All integer state is masked to 64 bits explicitly and
float expressions keep a fixed evaluation order; do not "simplify" the
arithmetic here without re-running the lane equivalence tests.
"""

import bisect
from math import log

try:
    import cython
except ImportError:  # interpreter without Cython installed: shim the decorators
    class _CythonShim:
        compiled = False

        @staticmethod
        def cclass(cls):
            return cls

        @staticmethod
        def ccall(f):
            return f

        @staticmethod
        def cfunc(f):
            return f

        @staticmethod
        def cast(_t, v):
            return int(v)

        def __getattr__(self, name):  # type placeholders used in annotations
            return object

    cython = _CythonShim()

_MASK64 = 0xFFFFFFFFFFFFFFFF
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# cython.compiled folds to a literal True during compilation, so the
# compiled lane never touches the cython name at runtime.
KERNELS_COMPILED = bool(cython.compiled)


@cython.ccall
def fnv1a64(data: bytes) -> cython.ulonglong:
    h: cython.ulonglong = 0xCBF29CE484222325
    # uchar, not a wider type: compiled bytes iteration yields signed char,
    # which would sign-extend values >= 0x80 before the xor.
    b: cython.uchar
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


@cython.cclass
class SplitMix64:
    """Deterministic 64-bit PRNG; one instance per independent stream."""

    _state: cython.ulonglong

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @cython.ccall
    def next_u64(self) -> cython.ulonglong:
        s: cython.ulonglong = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        self._state = s
        z: cython.ulonglong = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    @cython.ccall
    def next_unit(self) -> cython.double:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV53

    @cython.ccall
    def next_below(self, n: cython.ulonglong) -> cython.ulonglong:
        """Uniform integer in [0, n). Goes through the unit double so both
        lanes compute the identical value; an integer multiply-shift would
        need a 117-bit intermediate, which C does not have. The guard covers
        the one case where rounding lands exactly on n."""
        v: cython.ulonglong = cython.cast(
            cython.ulonglong, (self.next_u64() >> 11) * _INV53 * n
        )
        return v if v < n else n - 1


def rng_stream(seed: int, label: str) -> SplitMix64:
    """Independent stream derived from the scenario seed and a purpose label."""
    return SplitMix64((seed & _MASK64) ^ fnv1a64(label.encode("utf-8")))


@cython.ccall
def exp_interval(rng: SplitMix64, mean: cython.double) -> cython.double:
    """Exponential inter-arrival sample with the given mean."""
    return -log(1.0 - rng.next_unit()) * mean


@cython.ccall
def quantize_us(t: cython.double) -> cython.longlong:
    """Round a duration/instant in float us to the 1 us event clock."""
    return cython.cast(cython.longlong, t + 0.5)


@cython.ccall
def service_factor(amort_share: cython.double, depth: cython.longlong) -> cython.double:
    """Latency amortization: the share `s` of base latency is split across
    the `depth` commands concurrently in service; the rest is serial."""
    if depth <= 1 or amort_share <= 0.0:
        return 1.0
    return (1.0 - amort_share) + amort_share / depth


@cython.ccall
def sample_service_us(
    rng: SplitMix64,
    base_mean_us: cython.double,
    jitter: cython.double,
    size_bytes: cython.double,
    inv_bw_us_per_byte: cython.double,
    amort_share: cython.double,
    depth: cython.longlong,
) -> cython.double:
    lat: cython.double = base_mean_us * service_factor(amort_share, depth)
    if jitter > 0.0:
        lat = lat * (1.0 - jitter + 2.0 * jitter * rng.next_unit())
    return lat + size_bytes * inv_bw_us_per_byte


@cython.cclass
class QosGate:
    """Continuous-refill token buckets for one device: an IOPS bucket, a
    bandwidth bucket and gp2-style burst credits. Burst credits are spent
    when the IOPS bucket is empty (paced at burst_iops) and are earned from
    refill overflow while the device idles. Time is float microseconds.
    """

    _iops_rate: cython.double  # tokens per us; 0 = unlimited
    _iops_cap: cython.double
    _iops_tokens: cython.double
    _bw_rate: cython.double  # bytes per us; 0 = unlimited
    _bw_cap: cython.double
    _bw_tokens: cython.double
    _burst_rate: cython.double
    _burst_cap: cython.double
    _burst_credits: cython.double
    _burst_frac: cython.double
    _next_burst_us: cython.double
    _stamp_us: cython.double

    def __init__(
        self,
        iops_limit: float,
        bandwidth_limit: float,
        burst_iops: float = 0.0,
        burst_credit_capacity: float = 0.0,
        burst_refill_fraction: float = 0.5,
    ):
        # Buckets bank at most 10 ms of headroom: sustained rate is the
        # provisioned limit, and a burst deeper than the bank is paced at
        # that limit rather than absorbed. The bandwidth floor must cover
        # one maximally merged command or large commands are undercharged.
        self._iops_rate = iops_limit / 1e6
        self._iops_cap = max(self._iops_rate * 1e4, 8.0)
        self._iops_tokens = self._iops_cap
        self._bw_rate = bandwidth_limit / 1e6
        self._bw_cap = max(self._bw_rate * 1e4, 1024.0 * 1024.0)
        self._bw_tokens = self._bw_cap
        self._burst_rate = burst_iops / 1e6
        self._burst_cap = burst_credit_capacity
        self._burst_credits = burst_credit_capacity
        self._burst_frac = burst_refill_fraction
        self._next_burst_us = 0.0
        self._stamp_us = 0.0

    @cython.cfunc
    def _refill(self, now_us: cython.double):
        dt: cython.double = now_us - self._stamp_us
        if dt <= 0.0:
            return
        self._stamp_us = now_us
        if self._iops_rate > 0.0:
            t: cython.double = self._iops_tokens + dt * self._iops_rate
            if t > self._iops_cap:
                if self._burst_cap > 0.0:
                    spill: cython.double = (t - self._iops_cap) * self._burst_frac
                    c: cython.double = self._burst_credits + spill
                    self._burst_credits = c if c < self._burst_cap else self._burst_cap
                t = self._iops_cap
            self._iops_tokens = t
        if self._bw_rate > 0.0:
            b: cython.double = self._bw_tokens + dt * self._bw_rate
            self._bw_tokens = b if b < self._bw_cap else self._bw_cap

    @cython.ccall
    def admit_at(self, now_us: cython.double, size_bytes: cython.double) -> cython.double:
        """Earliest instant >= now at which one command of `size_bytes` could
        be admitted. Does not consume tokens. Bucket time is monotone: a
        caller behind the last consumption queues after it, it cannot spend
        tokens that are already gone."""
        if now_us < self._stamp_us:
            now_us = self._stamp_us
        self._refill(now_us)
        t: cython.double = now_us
        if self._iops_rate > 0.0 and self._iops_tokens < 1.0:
            t_base: cython.double = now_us + (1.0 - self._iops_tokens) / self._iops_rate
            if self._burst_cap > 0.0 and self._burst_credits >= 1.0:
                t_burst: cython.double = self._next_burst_us
                if t_burst < now_us:
                    t_burst = now_us
                if t_burst < t_base:
                    t_base = t_burst
            if t_base > t:
                t = t_base
        if self._bw_rate > 0.0 and self._bw_tokens < size_bytes:
            t_bw: cython.double = now_us + (size_bytes - self._bw_tokens) / self._bw_rate
            if t_bw > t:
                t = t_bw
        return t

    @cython.ccall
    def consume(self, at_us: cython.double, size_bytes: cython.double):
        """Take the tokens for one admitted command. Callers admit first;
        token counts are clamped at zero so float dust cannot go negative."""
        if at_us < self._stamp_us:
            at_us = self._stamp_us
        self._refill(at_us)
        if self._iops_rate > 0.0:
            if self._iops_tokens >= 1.0:
                self._iops_tokens = self._iops_tokens - 1.0
            elif (
                self._burst_cap > 0.0
                and self._burst_credits >= 1.0
                and self._next_burst_us <= at_us
            ):
                self._burst_credits = self._burst_credits - 1.0
                self._next_burst_us = at_us + 1.0 / self._burst_rate
            else:
                t: cython.double = self._iops_tokens - 1.0
                self._iops_tokens = t if t > 0.0 else 0.0
        if self._bw_rate > 0.0:
            b: cython.double = self._bw_tokens - size_bytes
            self._bw_tokens = b if b > 0.0 else 0.0

    @cython.ccall
    def burst_credits_left(self) -> cython.double:
        return self._burst_credits


@cython.cclass
class ExtentMap:
    """Sorted disjoint byte ranges [start, end). Inserts coalesce touching
    and overlapping ranges; removal is by lowest offset (flusher order) or
    wholesale (fsync). Totals are exact integers for conservation checks."""

    _starts: list
    _ends: list
    _total: cython.longlong

    def __init__(self):
        self._starts = []
        self._ends = []
        self._total = 0

    @cython.ccall
    def add(self, start: cython.longlong, end: cython.longlong) -> cython.longlong:
        """Insert [start, end); returns the number of newly covered bytes."""
        if end <= start:
            return 0
        starts = self._starts
        ends = self._ends
        i: cython.Py_ssize_t = bisect.bisect_left(starts, start)
        lo: cython.Py_ssize_t = i
        if i > 0 and ends[i - 1] >= start:
            lo = i - 1
            start = starts[lo]
        j: cython.Py_ssize_t = lo
        n: cython.Py_ssize_t = len(starts)
        covered: cython.longlong = 0
        while j < n and starts[j] <= end:
            e: cython.longlong = ends[j]
            covered += e - starts[j]
            if e > end:
                end = e
            j += 1
        added: cython.longlong = (end - start) - covered
        starts[lo:j] = [start]
        ends[lo:j] = [end]
        self._total += added
        return added

    @cython.ccall
    def subtract(self, start: cython.longlong, end: cython.longlong) -> cython.longlong:
        """Remove [start, end) from the map; returns bytes actually removed."""
        if end <= start or not self._starts:
            return 0
        starts = self._starts
        ends = self._ends
        i: cython.Py_ssize_t = bisect.bisect_left(starts, start)
        if i > 0 and ends[i - 1] > start:
            i -= 1
        removed: cython.longlong = 0
        new_starts = []
        new_ends = []
        j: cython.Py_ssize_t = i
        n: cython.Py_ssize_t = len(starts)
        while j < n and starts[j] < end:
            s: cython.longlong = starts[j]
            e: cython.longlong = ends[j]
            cut_lo: cython.longlong = s if s > start else start
            cut_hi: cython.longlong = e if e < end else end
            removed += cut_hi - cut_lo
            if s < cut_lo:
                new_starts.append(s)
                new_ends.append(cut_lo)
            if cut_hi < e:
                new_starts.append(cut_hi)
                new_ends.append(e)
            j += 1
        starts[i:j] = new_starts
        ends[i:j] = new_ends
        self._total -= removed
        return removed

    @cython.ccall
    def pop_chunk(self, max_len: cython.longlong) -> tuple:
        """Remove and return the lowest-offset range, capped at max_len bytes."""
        s: cython.longlong = self._starts[0]
        e: cython.longlong = self._ends[0]
        if e - s > max_len:
            e = s + max_len
            self._starts[0] = e
        else:
            del self._starts[0]
            del self._ends[0]
        self._total -= e - s
        return (s, e)

    @cython.ccall
    def take_all(self) -> list:
        """Remove and return every range as (start, end) pairs."""
        out = list(zip(self._starts, self._ends))
        self._starts = []
        self._ends = []
        self._total = 0
        return out

    @cython.ccall
    def snapshot(self) -> list:
        return list(zip(self._starts, self._ends))

    @cython.ccall
    def total(self) -> cython.longlong:
        return self._total

    @cython.ccall
    def count(self) -> cython.Py_ssize_t:
        return len(self._starts)

    def __bool__(self):
        return len(self._starts) > 0


@cython.ccall
def closed_loop_run(
    seed: int,
    threads: cython.longlong,
    io_size: cython.double,
    duration_us: cython.double,
    base_mean_us: cython.double,
    jitter: cython.double,
    inv_bw_us_per_byte: cython.double,
    amort_share: cython.double,
    gate: QosGate,
) -> tuple:
    """Closed loop of N threads against one device, in float microseconds.

    Each thread keeps exactly one command outstanding. Returns
    (ops, bytes_done, last_completion_us). Service depth for amortization is
    the number of commands in service at admission, self included.
    """
    rng = rng_stream(seed, "svc")
    comp = [0.0] * threads
    ops: cython.longlong = 0
    done: cython.double = 0.0
    last: cython.double = 0.0
    while True:
        i: cython.Py_ssize_t = 0
        k: cython.Py_ssize_t
        t: cython.double = comp[0]
        for k in range(1, threads):
            if comp[k] < t:
                t = comp[k]
                i = k
        if t >= duration_us:
            break
        ta: cython.double = gate.admit_at(t, io_size)
        gate.consume(ta, io_size)
        depth: cython.longlong = 1
        for k in range(threads):
            if comp[k] > ta:
                depth += 1
        svc: cython.double = sample_service_us(
            rng, base_mean_us, jitter, io_size, inv_bw_us_per_byte, amort_share, depth
        )
        c: cython.double = ta + svc
        comp[i] = c
        ops += 1
        done += io_size
        if c > last:
            last = c
    return (ops, done, last)
