"""Kernel lane selection.

flushsim._kernels exists twice after a successful build: as a compiled
extension and as its own source. The extension wins the normal import;
FLUSHSIM_PURE=1 forces the interpreted source lane instead. Everything
else in the package imports kernel symbols from here so the choice is
made in exactly one place.
"""

import importlib.util
import os
import sys
from pathlib import Path

_SOURCE_LANE_NAME = "flushsim._kernels_source"


def load_source_lane():
    """Load the interpreted _kernels source under a private module name,
    bypassing a compiled extension if one shadows it."""
    if _SOURCE_LANE_NAME in sys.modules:
        return sys.modules[_SOURCE_LANE_NAME]
    path = Path(__file__).with_name("_kernels.py")
    spec = importlib.util.spec_from_file_location(_SOURCE_LANE_NAME, path)
    mod = importlib.util.module_from_spec(spec)
    sys.modules[_SOURCE_LANE_NAME] = mod
    spec.loader.exec_module(mod)
    return mod


if os.environ.get("FLUSHSIM_PURE"):
    _impl = load_source_lane()
else:
    from . import _kernels as _impl

KERNELS_COMPILED = _impl.KERNELS_COMPILED
ACTIVE_LANE = "compiled" if KERNELS_COMPILED else "source"

SplitMix64 = _impl.SplitMix64
QosGate = _impl.QosGate
ExtentMap = _impl.ExtentMap
fnv1a64 = _impl.fnv1a64
rng_stream = _impl.rng_stream
exp_interval = _impl.exp_interval
quantize_us = _impl.quantize_us
service_factor = _impl.service_factor
sample_service_us = _impl.sample_service_us
closed_loop_run = _impl.closed_loop_run
