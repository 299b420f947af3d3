"""
Unit tests for the measurement workflows, run against noise-free devices
"""

import numpy as np
import pytest

from src.backend import SimulatorBackend
from src.device import ApiInfo, Vendor
from src.errors import InputError, UnboundedSearchError, UnsupportedMeasurementError
from src.memsim import Direction, device_info
from src.probes import (
    AttributeResult,
    Method,
    ProbeSettings,
    ProbeTarget,
    classify_hit_miss,
    find_search_interval,
    measure_amount,
    measure_bandwidth,
    measure_cache_line_size,
    measure_cache_size,
    measure_fetch_granularity,
    measure_l2_segments,
    measure_load_latency,
    measure_physical_sharing,
    measure_reference_latency,
    measure_sl1d_sharing,
    nearest_integer_fraction,
    partner_base,
    size_sweep,
    sweep_series,
)
from src.stats import LatencyMatrix, detect_change_point, reduce_geometric
from tests.conftest import l1_target, make_spec

pytestmark = pytest.mark.unit


@pytest.fixture
def backend(unit_spec):
    return SimulatorBackend(unit_spec)


@pytest.fixture
def l1(backend, settings):
    return l1_target(backend, settings)


def texture_spec():
    """L1 behind global and readonly, a separate 2 KiB cache behind texture"""
    document = make_spec().model_dump(mode="json")
    levels = document["levels"]
    levels.insert(
        1,
        {
            "name": "TextureCache",
            "size_bytes": 2048,
            "line_size_bytes": 128,
            "fetch_granularity_bytes": 32,
            "hit_latency_cycles": 60,
        },
    )
    return make_spec(
        levels=levels,
        logical_spaces={
            "global": ["L1", "L2", "DeviceMemory"],
            "readonly": ["L1", "L2", "DeviceMemory"],
            "texture": ["TextureCache", "L2", "DeviceMemory"],
        },
    )


def scalar_spec():
    """amd-like device with four CUs; physical CUs 4 and 5 share one sL1d"""
    return make_spec(
        vendor="amd-like",
        compute={
            "num_sm": 4,
            "cores_per_sm": 64,
            "max_blocks_per_sm": 4,
            "max_threads_per_block": 256,
            "max_threads_per_sm": 1024,
            "warp_size": 64,
            "registers_per_block": 65536,
            "registers_per_sm": 65536,
        },
        levels=[
            {
                "name": "sL1d",
                "size_bytes": 2048,
                "line_size_bytes": 64,
                "fetch_granularity_bytes": 64,
                "hit_latency_cycles": 40,
                "scope": "per-cu-group",
            },
            {
                "name": "L2",
                "size_bytes": 65536,
                "line_size_bytes": 128,
                "fetch_granularity_bytes": 32,
                "hit_latency_cycles": 200,
                "scope": "per-gpu",
            },
            {
                "name": "DeviceMemory",
                "size_bytes": 1 << 30,
                "hit_latency_cycles": 600,
                "scope": "per-gpu",
                "is_cache": False,
            },
        ],
        logical_spaces={"scalar": ["sL1d", "L2", "DeviceMemory"]},
        cu_topology={
            "physical_cu_ids": [4, 5, 6, 7],
            "active_cu_ids": [4, 5, 6, 7],
            "sl1d_groups": [[4, 5], [6], [7]],
        },
    )


def test_classify_hit_miss():
    misses = classify_hit_miss([30, 100, 114, 116, 200], 30, 200)
    assert misses.tolist() == [False, False, False, True, True]
    with pytest.raises(InputError):
        classify_hit_miss([30], 200, 200)


def test_partner_base_is_past_the_first_array():
    for size in (1024, 65536, 243712):
        assert partner_base(size) > size
        assert partner_base(size) % 65536 == 0


def test_reference_latencies(backend, l1):
    assert l1.hit_latency == 30
    assert l1.miss_latency == 200
    beyond = measure_reference_latency(backend, "global", frozenset({"L1", "L2"}))
    assert beyond == 600


def test_search_interval_brackets_the_size(backend, l1, settings):
    lo, hi = find_search_interval(backend, l1, settings)
    assert lo <= 4096 < hi
    assert hi - lo <= settings.narrow_steps * settings.search_stride_bytes


def test_search_interval_unbounded(backend, l1, settings):
    with pytest.raises(UnboundedSearchError) as excinfo:
        find_search_interval(backend, l1, settings, cap=2048)
    assert excinfo.value.scanned == (1024, 2048)


def test_size_sweep_shape(backend, l1, settings):
    matrix = size_sweep(backend, l1, (3584, 4608), 32, settings)
    assert len(matrix) == 33
    assert matrix.timed_count == settings.timed_count
    assert np.all(matrix.values[matrix.sizes <= 4096] == 30)
    assert np.all(matrix.values[matrix.sizes > 4096] == 200)
    with pytest.raises(InputError):
        size_sweep(backend, l1, (4096, 1024), 32, settings)


def test_sweep_series_caps_spikes_at_the_miss_latency():
    """Spiky hit rows must not move the change point off the hit/miss junction"""
    rows = [[30] * 8 for _ in range(16)]
    rows += [[30] * 7 + [600] for _ in range(4)]
    rows += [[200] * 8 for _ in range(20)]
    matrix = LatencyMatrix(np.arange(1, 41) * 32, rows)

    assert detect_change_point(reduce_geometric(matrix)).index == 16
    assert detect_change_point(sweep_series(matrix, 200.0)).index == 20
    np.testing.assert_array_equal(sweep_series(matrix, None).scores, reduce_geometric(matrix).scores)


def test_cache_size_is_exact(backend, l1, settings):
    sweeps = []
    result = measure_cache_size(backend, l1, settings, on_sweep=sweeps.append)
    assert result.value == 4096
    assert result.method is Method.BENCHMARK
    assert result.confidence == pytest.approx(0.999)
    assert len(sweeps) == 1


def test_cache_size_of_a_larger_cache():
    spec = make_spec()
    document = spec.model_dump(mode="json")
    document["levels"][0]["size_bytes"] = 8192
    backend = SimulatorBackend(make_spec(levels=document["levels"]))
    settings = ProbeSettings()
    result = measure_cache_size(backend, l1_target(backend, settings), settings)
    assert result.value == 8192


def test_cache_size_from_api(tiny_backend, tiny_l1, settings):
    info = device_info(tiny_backend.spec)
    result = measure_cache_size(tiny_backend, tiny_l1, settings, api_info=info, api_level="DeviceMemory")
    assert result.method is Method.API
    assert result.value == 1 << 30
    assert result.confidence == 1.0


def test_cache_size_capped_by_space(backend):
    settings = ProbeSettings(space_caps={"global": 2048})
    target = l1_target(backend, settings)
    result = measure_cache_size(backend, target, settings)
    assert result.inconclusive
    assert result.capped
    assert result.lower_bound == 2048
    assert result.detail.startswith("> 2048 B")
    assert result.confidence == 0.0


def test_cache_size_unbounded_without_space_cap(backend, l1, settings):
    result = measure_cache_size(backend, l1, settings, cap=2048)
    assert result.inconclusive
    assert not result.capped


def test_cache_size_needs_miss_reference(backend, settings):
    target = ProbeTarget(element="L1", space="global", hit_latency=30.0)
    with pytest.raises(UnsupportedMeasurementError):
        measure_cache_size(backend, target, settings)


def test_fetch_granularity(backend, l1, settings):
    result = measure_fetch_granularity(backend, l1, 4096, settings)
    assert result.value == 32
    assert result.confidence == 1.0


def test_fetch_granularity_without_size(backend, l1, settings):
    assert measure_fetch_granularity(backend, l1, None, settings).value == 32


def test_load_latency_of_a_cache(backend, l1, settings):
    stats = measure_load_latency(backend, l1, 32, settings, size_bytes=4096)
    assert stats.mean == 30.0
    assert stats.count == settings.timed_count


def test_load_latency_of_device_memory(backend, settings):
    target = ProbeTarget(
        element="DeviceMemory",
        space="global",
        bypass=frozenset({"L1", "L2"}),
        hit_latency=600.0,
        is_cache=False,
    )
    stats = measure_load_latency(backend, target, None, settings)
    assert stats.mean == 600.0
    assert stats.p95 == 600.0


def test_load_latency_trims_spikes(tiny_spec, settings):
    noisy = tiny_spec.with_noise(
        tiny_spec.noise.model_copy(update={"spike_probability": 0.05, "jitter_stddev_fraction": 0.0})
    )
    backend = SimulatorBackend(noisy, seed=1)
    target = ProbeTarget(element="L1", space="global", hit_latency=30.0, miss_latency=400.0)
    stats = measure_load_latency(backend, target, 32, settings, size_bytes=8192)
    assert stats.max == 30.0
    assert stats.count < settings.timed_count


def test_cache_line_size(backend, l1, settings):
    result = measure_cache_line_size(backend, l1, 4096, 32, settings)
    assert result.value == 128
    assert 0.5 < result.confidence <= 1.0


def test_cache_line_size_rejects_bad_input(backend, l1, settings):
    with pytest.raises(InputError):
        measure_cache_line_size(backend, l1, 0, 32, settings)


def test_amount_of_a_single_l1(backend, l1, settings):
    result = measure_amount(backend, l1, 4096, 32, 32, settings)
    assert result.value == 1
    assert result.unit == "count"


def test_amount_of_a_split_l1(settings):
    document = make_spec().model_dump(mode="json")
    document["levels"][0]["amount"] = 2
    backend = SimulatorBackend(make_spec(levels=document["levels"]))
    result = measure_amount(backend, l1_target(backend, settings), 4096, 32, 32, settings)
    assert result.value == 2
    assert result.confidence == 1.0


def test_nearest_integer_fraction():
    assert nearest_integer_fraction(50e6, 25e6) == (2, 1.0)
    k, confidence = nearest_integer_fraction(50e6, 24.6e6)
    assert k == 2
    assert confidence == pytest.approx(0.984)
    assert nearest_integer_fraction(50e6, 50e6) == (1, 1.0)
    with pytest.raises(InputError):
        nearest_integer_fraction(0, 1)


def api_info(vendor, values):
    return ApiInfo(
        vendor=vendor,
        model="api-only",
        clock_rate_khz=1000000,
        compute=make_spec().compute,
        values=values,
    )


def test_l2_segments_from_measured_size(backend):
    info = api_info(Vendor.NVIDIA, {"L2": {"size": 50_000_000}})
    segment = AttributeResult(value=24_600_000, confidence=0.999)
    result = measure_l2_segments(backend, info, segment_size=segment)
    assert result.value == 2
    assert result.confidence == pytest.approx(0.984)
    assert result.method is Method.BENCHMARK


def test_l2_segments_on_amd_come_from_the_api(backend):
    result = measure_l2_segments(backend, api_info(Vendor.AMD, {"L2": {"amount": 16}}))
    assert result.value == 16
    assert result.method is Method.API
    assert measure_l2_segments(backend, api_info(Vendor.AMD, {})).inconclusive


def test_l2_segments_need_the_api_total(backend):
    with pytest.raises(UnsupportedMeasurementError):
        measure_l2_segments(backend, api_info(Vendor.NVIDIA, {}))
    inconclusive = AttributeResult.inconclusive_result("B", "no change point")
    result = measure_l2_segments(
        backend, api_info(Vendor.NVIDIA, {"L2": {"size": 1 << 20}}), segment_size=inconclusive
    )
    assert result.inconclusive


def test_physical_sharing(settings):
    backend = SimulatorBackend(texture_spec())
    l1 = l1_target(backend, settings)
    hit = measure_reference_latency(backend, "readonly", frozenset(), settings)
    readonly = ProbeTarget(element="Readonly", space="readonly", hit_latency=hit, miss_latency=l1.miss_latency)
    texture = ProbeTarget(
        element="Texture",
        space="texture",
        hit_latency=measure_reference_latency(backend, "texture", frozenset(), settings),
        miss_latency=l1.miss_latency,
    )
    assert texture.hit_latency == 60

    sharing = measure_physical_sharing(
        backend,
        [l1, texture, readonly],
        {"L1": 4096, "Texture": 2048, "Readonly": 4096},
        {"L1": 32, "Texture": 32, "Readonly": 32},
        settings,
    )
    assert sharing.groups == [["L1", "Readonly"], ["Texture"]]
    assert sharing.shared_with("L1") == ["Readonly"]
    assert sharing.shared_with("Texture") == []
    assert sharing.unknown_pairs == []


def test_physical_sharing_skips_unknown_sizes(settings):
    backend = SimulatorBackend(texture_spec())
    l1 = l1_target(backend, settings)
    readonly = ProbeTarget(element="Readonly", space="readonly", hit_latency=30.0, miss_latency=200.0)
    sharing = measure_physical_sharing(backend, [l1, readonly], {"L1": 4096, "Readonly": None}, settings=settings)
    assert sharing.groups == [["L1"], ["Readonly"]]
    assert sharing.unknown_pairs == [("L1", "Readonly")]


def test_sl1d_sharing(settings):
    backend = SimulatorBackend(scalar_spec())
    target = ProbeTarget(element="sL1d", space="scalar", hit_latency=40.0, miss_latency=200.0)
    seen = []
    sharing = measure_sl1d_sharing(backend, target, [4, 5, 6, 7], 2048, 64, settings, progress=seen.append)
    assert sharing.groups == [[4, 5], [6], [7]]
    assert sharing.exclusive == [6, 7]
    assert seen == [0, 1, 2, 3]


def test_bandwidth(backend):
    target = ProbeTarget(element="L2", space="global", bypass=frozenset({"L1"}), hit_latency=200.0)
    compute = make_spec().compute
    read = measure_bandwidth(backend, target, Direction.READ, compute)
    write = measure_bandwidth(backend, target, Direction.WRITE, compute)
    assert read.value == pytest.approx(500.0)
    assert write.value == pytest.approx(400.0)
    assert read.unit == "GiB/s"


def test_probe_settings_validation():
    with pytest.raises(ValueError):
        ProbeSettings(timed_count=8)
    with pytest.raises(ValueError):
        ProbeSettings(alpha_grid=(0.0,))
    assert ProbeSettings(alpha_grid=(0.05, 0.001)).alpha_grid == (0.001, 0.05)
    assert ProbeSettings().space_cap("constant") == 65536
    assert ProbeSettings().space_cap("global") is None


def test_attribute_result_helpers():
    api = AttributeResult.from_api(4096, "B")
    assert api.method is Method.API
    assert not api.inconclusive
    failed = AttributeResult.inconclusive_result("B", "no change point")
    assert failed.inconclusive
    assert failed.confidence == 0.0
