"""
Unit tests for the bundled profiles and spec files
"""

import json

import numpy as np
import pytest

from src.device import Vendor, dump_device_spec
from src.errors import ConfigError, InputError, SpecValidationError
from src.planner import find_element
from src.profiles import (
    BUILTIN_NAMES,
    builtin_profiles,
    get_profile,
    load_device_spec,
    random_device_spec,
    resolve_device,
    save_device_spec,
    scale_profile,
)

pytestmark = pytest.mark.unit


def test_builtin_profiles_load():
    profiles = builtin_profiles()
    assert tuple(profiles) == BUILTIN_NAMES
    for name, profile in profiles.items():
        assert profile.spec.model == name
        for element in profile.expected:
            find_element(profile.spec.vendor, element)


def test_reference_values():
    h100 = get_profile("synthetic-h100").spec
    assert h100.vendor is Vendor.NVIDIA
    assert h100.level("L1").size_bytes == 243712
    assert h100.level("ConstantL1").size_bytes == 2048
    assert h100.level("L2").amount == 2
    assert h100.level("L2").total_size_bytes == 52428800

    mi210 = get_profile("synthetic-mi210")
    topo = mi210.spec.cu_topology
    assert len(topo.physical_cu_ids) == 128
    assert len(topo.active_cu_ids) == 104
    groups = mi210.expected["sL1d"]["shared_with"]
    assert len(groups) == 64
    assert sum(len(g) == 1 for g in groups) == 24


def test_unknown_profile():
    with pytest.raises(ConfigError, match="synthetic-h100"):
        get_profile("h200")


def test_scale_by_one_is_identity(h100_profile):
    assert scale_profile(h100_profile.spec, 1) == h100_profile.spec


def test_scale_l2_by_ten():
    profile = get_profile("synthetic-h100")
    scaled = scale_profile(profile, 10, levels=["L2"])
    assert scaled.spec.level("L2").size_bytes == 2621440
    assert scaled.spec.level("L1").size_bytes == 243712
    assert scaled.spec.level("L2").hit_latency_cycles == 220
    assert scaled.expected["L2"]["size"] == 5242880
    assert scaled.expected["L1"]["size"] == 243712
    # The source profile is untouched
    assert profile.expected["L2"]["size"] == 52428800


def test_scale_rejects_broken_divisibility(tiny_spec):
    with pytest.raises(InputError):
        scale_profile(tiny_spec, 3)
    with pytest.raises(InputError):
        scale_profile(tiny_spec, 0)


def test_save_and_load_round_trip(tmp_path, unit_spec):
    path = save_device_spec(unit_spec, tmp_path / "unit.json")
    assert load_device_spec(path) == unit_spec
    assert resolve_device(str(path)) == unit_spec
    assert resolve_device("tiny-test").model == "tiny-test"


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_device_spec(tmp_path / "absent.json")


def test_load_reports_field_paths(tmp_path, unit_spec):
    document = json.loads(dump_device_spec(unit_spec))
    document["levels"][0]["hit_latency_cycles"] = 900
    del document["levels"][1]["line_size_bytes"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(SpecValidationError) as excinfo:
        load_device_spec(path)
    problems = excinfo.value.problems
    assert any(p.startswith("levels[1].line_size_bytes") for p in problems)
    assert any(p.startswith("logical_spaces.global") for p in problems)
    assert str(path) in str(excinfo.value)


@pytest.mark.parametrize("seed", range(20))
def test_random_specs_are_valid(seed):
    rng = np.random.default_rng(seed)
    spec = random_device_spec(rng, noise=False, shared_texture=seed % 2 == 0)
    l1 = spec.level("L1")
    assert 8 * 1024 <= l1.size_bytes <= 256 * 1024
    assert l1.size_bytes % l1.line_size_bytes == 0
    assert l1.fetch_granularity_bytes <= l1.line_size_bytes
    assert spec.noise.silent
    if seed % 2 == 0:
        assert spec.logical_spaces["texture"][0] == "L1"
    else:
        assert spec.logical_spaces["texture"][0] == "TextureCache"


def test_random_specs_are_reproducible():
    first = random_device_spec(np.random.default_rng(5))
    second = random_device_spec(np.random.default_rng(5))
    assert first == second
    assert not first.noise.silent
