"""
Device description consumed by the simulator and reported through the API role
"""

import json
import logging
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import SpecValidationError

logger = logging.getLogger("topoprobe.device")

# Attributes a level may expose through the API role
API_ATTRIBUTES = (
    "size",
    "latency",
    "read_bw",
    "write_bw",
    "line_size",
    "fetch_granularity",
    "amount",
)

MAX_SECTORS_PER_LINE = 32

# Cores per SM/CU by microarchitecture; vendor APIs do not report them
CORES_PER_SM_LOOKUP: Dict[str, int] = {
    "6.0": 64,
    "6.1": 128,
    "7.0": 64,
    "7.5": 64,
    "8.0": 64,
    "8.6": 128,
    "8.9": 128,
    "9.0": 128,
    "gfx908": 64,
    "gfx90a": 64,
    "gfx940": 64,
    "gfx942": 64,
}


class Vendor(str, Enum):
    NVIDIA = "nvidia-like"
    AMD = "amd-like"


class Scope(str, Enum):
    PER_SM = "per-sm"
    PER_GPU = "per-gpu"
    PER_CU_GROUP = "per-cu-group"


class ComputeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_sm: int
    cores_per_sm: int
    max_blocks_per_sm: int
    max_threads_per_block: int
    max_threads_per_sm: int
    warp_size: int
    registers_per_block: int
    registers_per_sm: int


class MemoryLevelSpec(BaseModel):
    """One cache, scratchpad or device memory"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    size_bytes: int
    line_size_bytes: Optional[int] = None
    fetch_granularity_bytes: Optional[int] = None
    # None means fully associative
    associativity: Optional[int] = None
    hit_latency_cycles: int
    scope: Scope = Scope.PER_SM
    amount: int = 1
    peak_read_gibps: Optional[float] = None
    peak_write_gibps: Optional[float] = None
    is_cache: bool = True

    @property
    def ways(self) -> int:
        if not self.is_cache or not self.line_size_bytes:
            return 0
        return self.associativity or self.size_bytes // self.line_size_bytes

    @property
    def num_sets(self) -> int:
        if not self.is_cache or not self.line_size_bytes:
            return 0
        return self.size_bytes // (self.line_size_bytes * self.ways)

    @property
    def total_size_bytes(self) -> int:
        """Capacity summed over the segments of a per-GPU level"""
        if self.scope is Scope.PER_GPU:
            return self.size_bytes * self.amount
        return self.size_bytes


class CuTopologySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    physical_cu_ids: List[int] = Field(default_factory=list)
    active_cu_ids: List[int] = Field(default_factory=list)
    sl1d_groups: List[List[int]] = Field(default_factory=list)


class NoiseSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    jitter_stddev_fraction: float = 0.02
    spike_probability: float = 0.001
    spike_multiplier_range: Tuple[float, float] = (5.0, 20.0)
    seed: int = 0

    @property
    def silent(self) -> bool:
        return self.jitter_stddev_fraction == 0.0 and self.spike_probability == 0.0


class DeviceSpec(BaseModel):
    """Ground truth of a simulated device"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    vendor: Vendor
    model: str
    clock_rate_khz: int
    compute_capability: Optional[str] = None
    memory_clock_khz: Optional[int] = None
    bus_width_bits: Optional[int] = None
    compute: ComputeSpec
    levels: List[MemoryLevelSpec]
    logical_spaces: Dict[str, List[str]]
    cu_topology: CuTopologySpec = Field(default_factory=CuTopologySpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    api_exposed: List[Tuple[str, str]] = Field(default_factory=list)

    def level(self, name: str) -> MemoryLevelSpec:
        for level in self.levels:
            if level.name == name:
                return level
        raise KeyError(name)

    @property
    def level_names(self) -> List[str]:
        return [level.name for level in self.levels]

    @property
    def device_memory(self) -> MemoryLevelSpec:
        return self.levels[-1]

    def with_noise(self, noise: NoiseSpec) -> "DeviceSpec":
        return self.model_copy(update={"noise": noise})

    def without_noise(self) -> "DeviceSpec":
        return self.with_noise(
            NoiseSpec(jitter_stddev_fraction=0.0, spike_probability=0.0, seed=self.noise.seed)
        )


def lookup_cores_per_sm(compute_capability: Optional[str]) -> Optional[int]:
    if compute_capability is None:
        return None
    return CORES_PER_SM_LOOKUP.get(compute_capability)


def _format_loc(loc: Sequence[Union[str, int]]) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path or "<root>"


def _compute_problems(compute: ComputeSpec) -> List[str]:
    problems = []
    for field, value in compute.model_dump().items():
        if value <= 0:
            problems.append(f"compute.{field}: must be positive, got {value}")
    if compute.warp_size > 0 and compute.cores_per_sm % compute.warp_size != 0:
        problems.append(
            f"compute.warp_size: {compute.warp_size} does not divide cores_per_sm {compute.cores_per_sm}"
        )
    return problems


def _level_problems(index: int, level: MemoryLevelSpec, compute: ComputeSpec) -> List[str]:
    path = f"levels[{index}]"
    problems = []
    if level.size_bytes <= 0:
        problems.append(f"{path}.size_bytes: must be positive")
    if level.hit_latency_cycles <= 0:
        problems.append(f"{path}.hit_latency_cycles: must be positive")
    if level.amount < 1:
        problems.append(f"{path}.amount: must be at least 1")
    if level.scope is Scope.PER_SM and level.amount > compute.cores_per_sm:
        problems.append(f"{path}.amount: exceeds cores_per_sm")
    if level.scope is Scope.PER_GPU and level.amount > compute.num_sm:
        problems.append(f"{path}.amount: exceeds num_sm")
    for field in ("peak_read_gibps", "peak_write_gibps"):
        value = getattr(level, field)
        if value is not None and value <= 0:
            problems.append(f"{path}.{field}: must be positive")

    if not level.is_cache:
        return problems

    line = level.line_size_bytes
    fg = level.fetch_granularity_bytes
    if line is None or line <= 0:
        problems.append(f"{path}.line_size_bytes: required and positive for caches")
        return problems
    if fg is None or fg <= 0:
        problems.append(f"{path}.fetch_granularity_bytes: required and positive for caches")
        return problems
    if line % fg != 0:
        problems.append(f"{path}.fetch_granularity_bytes: {fg} does not divide line size {line}")
    elif line // fg > MAX_SECTORS_PER_LINE:
        problems.append(f"{path}.fetch_granularity_bytes: more than {MAX_SECTORS_PER_LINE} sectors per line")
    if level.size_bytes % line != 0:
        problems.append(f"{path}.size_bytes: {level.size_bytes} is not a multiple of line size {line}")
    if level.associativity is not None:
        if level.associativity <= 0:
            problems.append(f"{path}.associativity: must be positive")
        elif level.size_bytes % (line * level.associativity) != 0:
            problems.append(
                f"{path}.associativity: line size times associativity does not divide size_bytes"
            )
    return problems


def spec_problems(spec: DeviceSpec) -> List[str]:
    """List every violated invariant, each prefixed with its field path"""
    problems = []
    if spec.clock_rate_khz <= 0:
        problems.append("clock_rate_khz: must be positive")
    for field in ("memory_clock_khz", "bus_width_bits"):
        value = getattr(spec, field)
        if value is not None and value <= 0:
            problems.append(f"{field}: must be positive, got {value}")
    expected_cores = lookup_cores_per_sm(spec.compute_capability)
    if expected_cores is not None and spec.compute.cores_per_sm != expected_cores:
        problems.append(
            f"compute.cores_per_sm: {spec.compute.cores_per_sm} disagrees with {expected_cores} "
            f"for {spec.compute_capability}"
        )
    problems.extend(_compute_problems(spec.compute))

    if not spec.levels:
        problems.append("levels: at least device memory is required")
        return problems

    names = spec.level_names
    seen = set()
    for index, level in enumerate(spec.levels):
        if level.name in seen:
            problems.append(f"levels[{index}].name: duplicate level name {level.name}")
        seen.add(level.name)
        problems.extend(_level_problems(index, level, spec.compute))

    memory = spec.device_memory
    if memory.is_cache:
        problems.append(f"levels[{len(spec.levels) - 1}]: last level must be device memory (is_cache false)")

    if not spec.logical_spaces:
        problems.append("logical_spaces: at least one logical space is required")
    for space, path in spec.logical_spaces.items():
        where = f"logical_spaces.{space}"
        if not path:
            problems.append(f"{where}: traversal must not be empty")
            continue
        unknown = [name for name in path if name not in seen]
        if unknown:
            problems.append(f"{where}: unknown levels {unknown}")
            continue
        if path[-1] != memory.name:
            problems.append(f"{where}: traversal must end at {memory.name}")
        latencies = [spec.level(name).hit_latency_cycles for name in path]
        if any(b <= a for a, b in zip(latencies, latencies[1:])):
            problems.append(f"{where}: latencies must strictly increase along {path}")
        if len(set(path)) != len(path):
            problems.append(f"{where}: a level appears twice in {path}")

    topo = spec.cu_topology
    physical = set(topo.physical_cu_ids)
    if len(physical) != len(topo.physical_cu_ids):
        problems.append("cu_topology.physical_cu_ids: duplicate ids")
    if not set(topo.active_cu_ids) <= physical:
        problems.append("cu_topology.active_cu_ids: must be a subset of physical_cu_ids")
    if topo.sl1d_groups:
        grouped = [cu for group in topo.sl1d_groups for cu in group]
        if sorted(grouped) != sorted(physical) or len(grouped) != len(set(grouped)):
            problems.append("cu_topology.sl1d_groups: groups must partition physical_cu_ids")
        if any(not 1 <= len(group) <= 3 for group in topo.sl1d_groups):
            problems.append("cu_topology.sl1d_groups: groups hold 1 to 3 CUs")
    if any(level.scope is Scope.PER_CU_GROUP for level in spec.levels) and not topo.sl1d_groups:
        problems.append("cu_topology.sl1d_groups: required by per-cu-group levels")

    noise = spec.noise
    if noise.jitter_stddev_fraction < 0:
        problems.append("noise.jitter_stddev_fraction: must be non-negative")
    if not 0.0 <= noise.spike_probability < 1.0:
        problems.append("noise.spike_probability: must lie in [0, 1)")
    low, high = noise.spike_multiplier_range
    if not 1.0 <= low <= high:
        problems.append("noise.spike_multiplier_range: expected 1 <= low <= high")

    for index, (level, attribute) in enumerate(spec.api_exposed):
        if level not in seen:
            problems.append(f"api_exposed[{index}]: unknown level {level}")
        if attribute not in API_ATTRIBUTES:
            problems.append(f"api_exposed[{index}]: unknown attribute {attribute}")
    return problems


def validate_device_spec(spec: DeviceSpec, source: Optional[str] = None) -> DeviceSpec:
    problems = spec_problems(spec)
    if problems:
        raise SpecValidationError(problems, source=source)
    return spec


def parse_device_spec(data: Union[str, bytes, Dict[str, Any]], source: Optional[str] = None) -> DeviceSpec:
    """
    Parse and validate a device spec from JSON text or a decoded document

    Args:
        data: JSON text or already decoded mapping
        source: Name used in error messages (usually the file path)

    Returns:
        The validated DeviceSpec
    """
    try:
        if isinstance(data, (str, bytes)):
            document = json.loads(data)
        else:
            document = data
    except json.JSONDecodeError as e:
        raise SpecValidationError([f"<root>: invalid JSON: {e!s}"], source=source) from e

    try:
        spec = DeviceSpec.model_validate(document)
    except ValidationError as e:
        problems = [f"{_format_loc(err['loc'])}: {err['msg']}" for err in e.errors()]
        raise SpecValidationError(problems, source=source) from e

    return validate_device_spec(spec, source=source)


def dump_device_spec(spec: DeviceSpec) -> str:
    return json.dumps(spec.model_dump(mode="json"), indent=2) + "\n"


class ApiInfo(BaseModel):
    """What a vendor API would report about the device"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    vendor: Vendor
    model: str
    clock_rate_khz: int
    compute_capability: Optional[str] = None
    memory_clock_khz: Optional[int] = None
    bus_width_bits: Optional[int] = None
    compute: ComputeSpec
    # True when cores_per_sm comes from the microarchitecture table
    cores_per_sm_from_lookup: bool = False
    # Logical CU index -> physical CU id, amd-like devices only
    cu_physical_ids: Optional[List[int]] = None
    values: Dict[str, Dict[str, Union[int, float]]] = Field(default_factory=dict)

    def value(self, level: str, attribute: str) -> Optional[Union[int, float]]:
        return self.values.get(level, {}).get(attribute)

    def has(self, level: str, attribute: str) -> bool:
        return self.value(level, attribute) is not None
