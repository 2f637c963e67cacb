"""Device profiles, QoS admission, service times, closed-loop throughput."""

import pytest

from flushsim.kernels import rng_stream
from flushsim.storage import (
    KiB,
    MiB,
    STOCK_PROFILES,
    WRITE,
    DeviceProfile,
    IoCommand,
    ValidationError,
    closed_loop_throughput,
    qos_admit,
    qos_state_for,
    service_time,
)


def _profile(**kw):
    base = dict(
        name="probe",
        base_latency_us=55.0,
        internal_bandwidth=500e6,
        latency_jitter=0.0,
    )
    base.update(kw)
    return DeviceProfile(**base)


def _cmd(size, merged=1):
    return IoCommand(kind=WRITE, offset=0, size=size, merged_count=merged)


# -- profiles ----------------------------------------------------------------


def test_stock_profiles_present():
    assert set(STOCK_PROFILES) == {
        "local-ssd",
        "ebs-gp3-like",
        "ceph-rbd-like",
        "io2-like",
    }
    for p in STOCK_PROFILES.values():
        assert p.base_latency_us > 0
        assert p.internal_bandwidth > 0


def test_profile_validation_collects_problems():
    with pytest.raises(ValidationError) as exc:
        DeviceProfile(
            name="bad",
            base_latency_us=0.0,
            internal_bandwidth=0.0,
            latency_jitter=1.5,
        )
    msg = str(exc.value)
    assert "base_latency_us" in msg
    assert "internal_bandwidth" in msg
    assert "latency_jitter" in msg


def test_profile_burst_fields_must_pair():
    with pytest.raises(ValidationError):
        _profile(burst_iops=3000.0)
    _profile(burst_iops=3000.0, burst_credit_capacity=100.0)


def test_profile_capacity_page_multiple():
    with pytest.raises(ValidationError):
        _profile(capacity=8 * KiB + 1)


def test_with_qos_replaces_only_limits():
    base = STOCK_PROFILES["ebs-gp3-like"]
    tuned = base.with_qos(3000.0, 125e6)
    assert tuned.iops_limit == 3000.0
    assert tuned.bandwidth_limit == 125e6
    assert tuned.name == base.name
    assert tuned.base_latency_us == base.base_latency_us
    assert tuned.hw_queue_count == base.hw_queue_count
    named = base.with_qos(1000.0, 50e6, name="small")
    assert named.name == "small"


# -- service time ------------------------------------------------------------


def test_service_time_local_example():
    # 55 us base + 8 KiB / 500 MB/s = 55 + 16.384 us.
    rng = rng_stream(0, "svc")
    got = service_time(_profile(), _cmd(8 * KiB), rng)
    assert got == pytest.approx(71.384, rel=1e-12)


def test_service_time_distributed_example():
    # 700 us base + 8 KiB / 1 GB/s = 708.192 us at depth 1.
    prof = _profile(
        base_latency_us=700.0,
        internal_bandwidth=1e9,
        amortizable_latency_share=0.9,
    )
    rng = rng_stream(0, "svc")
    got = service_time(prof, _cmd(8 * KiB), rng)
    assert got == pytest.approx(708.192, rel=1e-12)


def test_service_time_amortizes_with_depth():
    prof = _profile(
        base_latency_us=700.0,
        internal_bandwidth=1e9,
        amortizable_latency_share=0.9,
    )
    rng = rng_stream(0, "svc")
    d1 = service_time(prof, _cmd(8 * KiB), rng, depth=1)
    d4 = service_time(prof, _cmd(8 * KiB), rng, depth=4)
    d16 = service_time(prof, _cmd(8 * KiB), rng, depth=16)
    assert d1 > d4 > d16
    assert d4 == pytest.approx(700.0 * 0.325 + 8.192, rel=1e-12)


def test_service_time_deterministic_per_stream():
    prof = _profile(latency_jitter=0.15)
    a = rng_stream(11, "svc")
    b = rng_stream(11, "svc")
    seq_a = [service_time(prof, _cmd(8 * KiB), a) for _ in range(32)]
    seq_b = [service_time(prof, _cmd(8 * KiB), b) for _ in range(32)]
    assert seq_a == seq_b
    assert len(set(seq_a)) > 1


# -- QoS admission -----------------------------------------------------------


def test_qos_admit_unlimited_is_now():
    gate = qos_state_for(_profile())
    assert qos_admit(gate, _cmd(1 * MiB), 1234.0) == 1234.0


def test_qos_admit_merged_costs_one_token():
    gate = qos_state_for(_profile(iops_limit=8.0))
    for _ in range(8):
        assert qos_admit(gate, _cmd(240 * KiB, merged=30), 0.0) == 0.0
    assert qos_admit(gate, _cmd(8 * KiB), 0.0) > 0.0


def test_qos_admit_sustained_rate():
    gate = qos_state_for(_profile(iops_limit=16000.0))
    t = 0.0
    stamps = [qos_admit(gate, _cmd(8 * KiB), t)]
    for _ in range(24000):
        t = qos_admit(gate, _cmd(8 * KiB), stamps[-1])
        stamps.append(t)
    window = (stamps[-1] - stamps[4000]) / 1e6
    rate = (len(stamps) - 1 - 4000) / window
    assert rate == pytest.approx(16000.0, rel=0.02)


# -- closed-loop throughput ----------------------------------------------------


def test_closed_loop_validation():
    prof = _profile()
    with pytest.raises(ValidationError):
        closed_loop_throughput(prof, 0, 8 * KiB, 1.0)
    with pytest.raises(ValidationError):
        closed_loop_throughput(prof, 1, 0, 1.0)
    assert closed_loop_throughput(prof, 1, 8 * KiB, 0.0) == 0.0
    assert closed_loop_throughput(prof, 1, 8 * KiB, -1.0) == 0.0


def test_closed_loop_exact_without_jitter_or_qos():
    # One thread, no QoS, no jitter: throughput is io_size / service_time.
    prof = _profile(base_latency_us=100.0, internal_bandwidth=1e9)
    svc_us = 100.0 + 8192.0 / 1000.0
    want = 8192.0 / (svc_us / 1e6)
    got = closed_loop_throughput(prof, 1, 8 * KiB, 2.0)
    assert got == pytest.approx(want, rel=1e-9)


def test_closed_loop_monotone_in_threads():
    prof = STOCK_PROFILES["ebs-gp3-like"]
    rates = [closed_loop_throughput(prof, n, 8 * KiB, 2.0, seed=1) for n in (1, 2, 4, 8)]
    assert rates == sorted(rates)
    assert rates[-1] > rates[0]


def test_closed_loop_monotone_in_io_size():
    prof = STOCK_PROFILES["ebs-gp3-like"]
    rates = [
        closed_loop_throughput(prof, 1, size, 2.0, seed=1)
        for size in (8 * KiB, 32 * KiB, 128 * KiB, 512 * KiB)
    ]
    assert rates == sorted(rates)
    assert rates[-1] > rates[0]


def test_closed_loop_deterministic():
    prof = STOCK_PROFILES["local-ssd"]
    a = closed_loop_throughput(prof, 4, 8 * KiB, 1.0, seed=9)
    b = closed_loop_throughput(prof, 4, 8 * KiB, 1.0, seed=9)
    assert a == b
    c = closed_loop_throughput(prof, 4, 8 * KiB, 1.0, seed=10)
    # Different seed moves the jittered samples, but only slightly.
    assert c != a
    assert abs(c - a) / a < 0.05
