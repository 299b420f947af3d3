"""
Bundled reference devices, spec file I/O and randomized specs for oracle tests
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union, overload

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.device import (
    ComputeSpec,
    DeviceSpec,
    MemoryLevelSpec,
    NoiseSpec,
    Scope,
    Vendor,
    dump_device_spec,
    parse_device_spec,
    validate_device_spec,
)
from src.errors import ConfigError, InputError

logger = logging.getLogger("topoprobe.profiles")

PROFILE_DIR = Path(__file__).parent / "data" / "profiles"
BUILTIN_NAMES = ("synthetic-h100", "synthetic-mi210", "tiny-test")

# Levels scaled by --scale; the L2 class dominates sweep time
SCALABLE_LEVELS = ("L2", "L3")


class ReferenceProfile(BaseModel):
    """A device spec together with the report values it should produce"""

    model_config = ConfigDict(frozen=True)

    name: str
    spec: DeviceSpec
    # element -> attribute -> expected value
    expected: Dict[str, Dict[str, Any]]


def load_device_spec(path: Union[str, Path]) -> DeviceSpec:
    """
    Read and validate a device spec file

    Raises:
        ConfigError: the file cannot be read
        SpecValidationError: parse or invariant problems, with field paths
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read device spec {path}: {e!s}") from e
    return parse_device_spec(text, source=str(path))


def save_device_spec(spec: DeviceSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_device_spec(spec), encoding="utf-8")
    return path


def _load_profile(name: str) -> ReferenceProfile:
    spec = load_device_spec(PROFILE_DIR / f"{name}.json")
    expected_path = PROFILE_DIR / f"{name}.expected.json"
    expected = json.loads(expected_path.read_text(encoding="utf-8")) if expected_path.exists() else {}
    return ReferenceProfile(name=name, spec=spec, expected=expected)


def builtin_profiles() -> Dict[str, ReferenceProfile]:
    return {name: _load_profile(name) for name in BUILTIN_NAMES}


def get_profile(name: str) -> ReferenceProfile:
    if name not in BUILTIN_NAMES:
        raise ConfigError(f"Unknown profile {name!r}; available: {', '.join(BUILTIN_NAMES)}")
    return _load_profile(name)


def resolve_device(device: str) -> DeviceSpec:
    """Builtin profile name or path to a spec file"""
    if device in BUILTIN_NAMES:
        return get_profile(device).spec
    return load_device_spec(device)


def _scale_level(level: MemoryLevelSpec, factor: int) -> MemoryLevelSpec:
    size = level.size_bytes
    unit = level.line_size_bytes * (level.associativity or 1)
    if size % factor != 0 or (size // factor) % unit != 0:
        raise InputError(
            f"Scaling {level.name} ({size} B) by {factor} breaks the line size divisibility"
        )
    return level.model_copy(update={"size_bytes": size // factor})


@overload
def scale_profile(profile: DeviceSpec, factor: int, levels: Optional[Sequence[str]] = None) -> DeviceSpec:
    ...


@overload
def scale_profile(
    profile: ReferenceProfile, factor: int, levels: Optional[Sequence[str]] = None
) -> ReferenceProfile:
    ...


def scale_profile(profile, factor, levels=None):
    """
    Divide cache sizes by ``factor``

    Latencies, line sizes and fetch granularities stay untouched. ``levels``
    restricts scaling to the named cache levels. Expected sizes of a
    ReferenceProfile are scaled along with the device spec.

    Raises:
        InputError: a scaled size is no longer a multiple of the line size
    """
    if not isinstance(factor, int) or factor < 1:
        raise InputError(f"Scale factor must be a positive integer, got {factor!r}")
    spec = profile.spec if isinstance(profile, ReferenceProfile) else profile
    selected = set(levels) if levels is not None else None

    scaled_names = []
    new_levels = []
    for level in spec.levels:
        if level.is_cache and factor != 1 and (selected is None or level.name in selected):
            new_levels.append(_scale_level(level, factor))
            scaled_names.append(level.name)
        else:
            new_levels.append(level)
    scaled = validate_device_spec(spec.model_copy(update={"levels": new_levels}))
    if scaled_names:
        logger.info(f"Scaled {', '.join(scaled_names)} of {spec.model} by 1/{factor}")

    if not isinstance(profile, ReferenceProfile):
        return scaled
    expected = {element: dict(values) for element, values in profile.expected.items()}
    for name in scaled_names:
        if "size" in expected.get(name, {}):
            expected[name]["size"] = expected[name]["size"] // factor
    return ReferenceProfile(name=profile.name, spec=scaled, expected=expected)


def random_device_spec(
    rng: np.random.Generator,
    noise: bool = True,
    shared_texture: Optional[bool] = None,
) -> DeviceSpec:
    """
    Random nvidia-like device with an L1, a texture path and an L2

    L1 size lies in [8 KiB, 256 KiB] as a multiple of its line size, with line
    size 64 or 128, fetch granularity 32 or 64 (never above the line size) and
    1, 2 or 4 instances per SM. The texture space either reuses the L1 or gets
    a cache of its own.
    """

    def cache_geometry():
        line = int(rng.choice([64, 128]))
        fg = int(rng.choice([g for g in (32, 64) if g <= line]))
        lines = int(rng.integers(8 * 1024 // line, 256 * 1024 // line + 1))
        return lines * line, line, fg

    size, line, fg = cache_geometry()
    amount = int(rng.choice([1, 2, 4]))
    l1_latency = int(rng.integers(25, 45))
    levels = [
        MemoryLevelSpec(
            name="L1",
            size_bytes=size,
            line_size_bytes=line,
            fetch_granularity_bytes=fg,
            hit_latency_cycles=l1_latency,
            amount=amount,
        )
    ]
    if shared_texture is None:
        shared_texture = bool(rng.integers(0, 2))
    texture_path = ["L1", "L2", "DeviceMemory"]
    if not shared_texture:
        tex_size, tex_line, tex_fg = cache_geometry()
        levels.append(
            MemoryLevelSpec(
                name="TextureCache",
                size_bytes=tex_size,
                line_size_bytes=tex_line,
                fetch_granularity_bytes=tex_fg,
                hit_latency_cycles=int(rng.integers(50, 90)),
            )
        )
        texture_path = ["TextureCache", "L2", "DeviceMemory"]

    levels.append(
        MemoryLevelSpec(
            name="L2",
            size_bytes=1024 * 1024,
            line_size_bytes=128,
            fetch_granularity_bytes=32,
            hit_latency_cycles=int(rng.integers(180, 240)),
            scope=Scope.PER_GPU,
            peak_read_gibps=1500.0,
            peak_write_gibps=1200.0,
        )
    )
    levels.append(
        MemoryLevelSpec(
            name="DeviceMemory",
            size_bytes=1024**3,
            hit_latency_cycles=int(rng.integers(550, 700)),
            scope=Scope.PER_GPU,
            peak_read_gibps=800.0,
            peak_write_gibps=700.0,
            is_cache=False,
        )
    )
    spec = DeviceSpec(
        vendor=Vendor.NVIDIA,
        model=f"random-{size}-{line}-{fg}-{amount}",
        clock_rate_khz=1500000,
        compute=ComputeSpec(
            num_sm=4,
            cores_per_sm=64,
            max_blocks_per_sm=8,
            max_threads_per_block=1024,
            max_threads_per_sm=2048,
            warp_size=32,
            registers_per_block=65536,
            registers_per_sm=65536,
        ),
        levels=levels,
        logical_spaces={
            "global": ["L1", "L2", "DeviceMemory"],
            "readonly": ["L1", "L2", "DeviceMemory"],
            "texture": texture_path,
        },
        noise=NoiseSpec(seed=int(rng.integers(0, 2**31))),
        api_exposed=[("L2", "size"), ("DeviceMemory", "size")],
    )
    if not noise:
        spec = spec.without_noise()
    return validate_device_spec(spec)
