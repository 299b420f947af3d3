"""
Unit tests for the measurement backend
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.backend import PChasePlan, SimulatorBackend, StreamPlan
from src.errors import InputError
from src.memsim import Direction

pytestmark = pytest.mark.unit


def test_plan_geometry_is_validated():
    plan = PChasePlan(space="global", array_bytes=4096, stride_bytes=32)
    assert plan.chain_length == 128
    assert plan.warmup
    with pytest.raises(ValidationError):
        PChasePlan(space="global", array_bytes=4096, stride_bytes=2)
    with pytest.raises(ValidationError):
        PChasePlan(space="global", array_bytes=16, stride_bytes=32)
    with pytest.raises(ValidationError):
        PChasePlan(space="global", array_bytes=4096, stride_bytes=32, base_address=-32)


def test_capabilities(unit_spec):
    caps = SimulatorBackend(unit_spec).capabilities()
    assert caps.spaces == frozenset({"global"})
    assert caps.levels == frozenset({"L1", "L2", "DeviceMemory"})
    assert caps.paired_actors
    assert caps.backend_id == "memsim"


def test_every_pchase_starts_cold(unit_spec):
    backend = SimulatorBackend(unit_spec)
    plan = PChasePlan(space="global", array_bytes=1024, stride_bytes=32, timed_count=32, warmup=False)
    first = backend.run_pchase(plan)
    second = backend.run_pchase(plan)
    assert np.all(first.latencies == 600)
    np.testing.assert_array_equal(first.latencies, second.latencies)
    assert len(first) == 32
    assert first.plan is plan


def test_pchase_needs_a_timed_load(unit_spec):
    backend = SimulatorBackend(unit_spec)
    with pytest.raises(InputError):
        backend.run_pchase(PChasePlan(space="global", array_bytes=1024, stride_bytes=32, timed_count=0))


def test_paired_phases_share_cache_state(unit_spec):
    backend = SimulatorBackend(unit_spec)
    warm = PChasePlan(space="global", array_bytes=1024, stride_bytes=32, timed_count=0)
    timed = warm.model_copy(update={"timed_count": 32, "warmup": False})
    traces = backend.run_paired_phase_sequence([warm, timed])
    assert len(traces) == 2
    assert len(traces[0]) == 0
    assert np.all(traces[1].latencies == 30)

    # A new sequence starts cold again
    again = backend.run_paired_phase_sequence([timed])
    assert np.all(again[0].latencies == 600)

    with pytest.raises(InputError):
        backend.run_paired_phase_sequence([])


def test_api_info_and_stream(tiny_spec):
    backend = SimulatorBackend(tiny_spec)
    info = backend.query_api_info()
    assert info.model == "tiny-test"
    assert info.value("DeviceMemory", "size") == 1 << 30

    plan = StreamPlan(
        space="global",
        direction=Direction.READ,
        threads_per_block=256,
        num_blocks=8,
        bytes_total=256 * 8 * 1024,
        bypass=frozenset({"L1"}),
    )
    assert backend.run_stream(plan) == pytest.approx(100.0)
    write = plan.model_copy(update={"direction": Direction.WRITE})
    assert backend.run_stream(write) == pytest.approx(80.0)
