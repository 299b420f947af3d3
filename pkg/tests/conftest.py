"""
Pytest configuration for topoprobe tests
"""

import numpy as np
import pytest

from src.backend import SimulatorBackend
from src.device import DeviceSpec, parse_device_spec
from src.probes import ProbeSettings, ProbeTarget, measure_reference_latency
from src.profiles import get_profile, scale_profile


def make_spec(**overrides) -> DeviceSpec:
    """Small two-cache nvidia-like device; keyword arguments replace top-level fields"""
    document = {
        "vendor": "nvidia-like",
        "model": "unit-device",
        "clock_rate_khz": 1000000,
        "compute": {
            "num_sm": 2,
            "cores_per_sm": 32,
            "max_blocks_per_sm": 4,
            "max_threads_per_block": 256,
            "max_threads_per_sm": 1024,
            "warp_size": 32,
            "registers_per_block": 65536,
            "registers_per_sm": 65536,
        },
        "levels": [
            {
                "name": "L1",
                "size_bytes": 4096,
                "line_size_bytes": 128,
                "fetch_granularity_bytes": 32,
                "hit_latency_cycles": 30,
            },
            {
                "name": "L2",
                "size_bytes": 65536,
                "line_size_bytes": 128,
                "fetch_granularity_bytes": 32,
                "hit_latency_cycles": 200,
                "scope": "per-gpu",
                "peak_read_gibps": 500.0,
                "peak_write_gibps": 400.0,
            },
            {
                "name": "DeviceMemory",
                "size_bytes": 1 << 30,
                "hit_latency_cycles": 600,
                "scope": "per-gpu",
                "is_cache": False,
            },
        ],
        "logical_spaces": {"global": ["L1", "L2", "DeviceMemory"]},
        "noise": {"jitter_stddev_fraction": 0.0, "spike_probability": 0.0},
    }
    document.update(overrides)
    return parse_device_spec(document)


@pytest.fixture
def unit_spec():
    """Noise-free 4 KiB L1 / 64 KiB L2 device"""
    return make_spec()


@pytest.fixture
def tiny_spec():
    return get_profile("tiny-test").spec


@pytest.fixture
def quiet_tiny_spec(tiny_spec):
    return tiny_spec.without_noise()


@pytest.fixture
def h100_profile():
    """synthetic-h100 with the L2 scaled down by 10"""
    return scale_profile(get_profile("synthetic-h100"), 10, levels=["L2"])


@pytest.fixture
def mi210_profile():
    return get_profile("synthetic-mi210")


@pytest.fixture
def settings():
    return ProbeSettings()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def l1_target(backend: SimulatorBackend, settings: ProbeSettings) -> ProbeTarget:
    """L1 on the global space with L2 (or device memory) as the miss reference"""
    hit = measure_reference_latency(backend, "global", frozenset(), settings)
    miss = measure_reference_latency(backend, "global", frozenset({"L1"}), settings)
    return ProbeTarget(element="L1", space="global", hit_latency=hit, miss_latency=miss)


@pytest.fixture
def tiny_backend(tiny_spec):
    return SimulatorBackend(tiny_spec, seed=7)


@pytest.fixture
def tiny_l1(tiny_backend, settings):
    return l1_target(tiny_backend, settings)
