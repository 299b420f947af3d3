"""
Deterministic simulated GPU memory hierarchy

A session holds one sectored LRU cache instance per (level, segment), walks the
traversal of a logical space on every load and adds seeded noise to timed loads.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.device import (
    ApiInfo,
    DeviceSpec,
    MemoryLevelSpec,
    NoiseSpec,
    Scope,
    Vendor,
    lookup_cores_per_sm,
    validate_device_spec,
)
from src.errors import InputError, UnknownLevelError, UnsupportedMeasurementError

logger = logging.getLogger("topoprobe.memsim")


class Direction(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class Actor:
    """The core issuing a load"""

    sm_id: int = 0
    core_index: int = 0
    cu_physical_id: Optional[int] = None


@dataclass(frozen=True)
class AccessResult:
    latency_cycles: int
    serviced_by: str
    was_hit_at_first_level: bool


class SectorCache:
    """One cache instance: LRU sets of lines, each line holding a sector-valid bitmap"""

    def __init__(self, level: MemoryLevelSpec):
        self.name = level.name
        self.line_size = int(level.line_size_bytes or 0)
        self.fetch_granularity = int(level.fetch_granularity_bytes or 0)
        self.sectors_per_line = self.line_size // self.fetch_granularity
        self.ways = level.ways
        self.num_sets = level.num_sets
        self._sets: Dict[int, "OrderedDict[int, int]"] = {}

    def __len__(self) -> int:
        return sum(len(lines) for lines in self._sets.values())

    def clear(self) -> None:
        self._sets.clear()

    def access(self, address: int) -> bool:
        """Look up one byte address, filling its sector on a miss; True on a hit"""
        line, offset = divmod(address, self.line_size)
        bit = 1 << (offset // self.fetch_granularity)
        lines = self._sets.get(line % self.num_sets)
        if lines is None:
            lines = self._sets[line % self.num_sets] = OrderedDict()

        mask = lines.get(line)
        if mask is not None:
            lines.move_to_end(line)
            if mask & bit:
                return True
            lines[line] = mask | bit
            return False

        if len(lines) >= self.ways:
            lines.popitem(last=False)
        lines[line] = bit
        return False

    def contains_any(self, lines: np.ndarray) -> bool:
        if not self._sets:
            return False
        resident = np.fromiter(
            (line for entries in self._sets.values() for line in entries), dtype=np.int64
        )
        return bool(resident.size) and bool(np.isin(lines, resident).any())

    def fill_sequential(self, lines: np.ndarray, masks: np.ndarray) -> None:
        """
        Apply the end state of one ascending pass over lines not yet resident

        ``lines`` is strictly increasing; every line ends up as MRU of its set in
        that order, and each set keeps only its ``ways`` most recent lines.
        """
        if lines.size == 0:
            return
        if self.num_sets == 1:
            self._insert(0, lines, masks)
            return
        set_ids = lines % self.num_sets
        order = np.argsort(set_ids, kind="stable")
        bounds = np.flatnonzero(np.diff(set_ids[order])) + 1
        for chunk in np.split(order, bounds):
            self._insert(int(set_ids[chunk[0]]), lines[chunk], masks[chunk])

    def _insert(self, set_id: int, lines: np.ndarray, masks: np.ndarray) -> None:
        entries = self._sets.get(set_id)
        if entries is None:
            entries = self._sets[set_id] = OrderedDict()
        if lines.size >= self.ways:
            entries.clear()
        for line, mask in zip(lines[-self.ways :].tolist(), masks[-self.ways :].tolist()):
            entries[line] = mask
        while len(entries) > self.ways:
            entries.popitem(last=False)


class NoiseStream:
    """
    Seeded measurement noise

    Draws happen in fixed blocks and every timed load consumes exactly one
    (jitter, spike draw, multiplier) triple, so the result does not depend on
    how loads are batched.
    """

    BLOCK = 4096

    def __init__(self, noise: NoiseSpec, seed: int):
        if seed < 0 or noise.seed < 0:
            raise InputError("Seeds must be non-negative")
        self.noise = noise
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([noise.seed, seed])))
        self._block: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
        self._pos = self.BLOCK

    def _refill(self) -> None:
        low, high = self.noise.spike_multiplier_range
        jitter = self._rng.standard_normal(self.BLOCK)
        spike = self._rng.random(self.BLOCK)
        multiplier = self._rng.uniform(low, high, self.BLOCK)
        self._block = (jitter, spike, multiplier)
        self._pos = 0

    def draw(self, count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        parts: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        needed = count
        while needed > 0:
            if self._block is None or self._pos >= self.BLOCK:
                self._refill()
            assert self._block is not None
            take = min(needed, self.BLOCK - self._pos)
            end = self._pos + take
            parts.append(tuple(arr[self._pos : end] for arr in self._block))  # type: ignore[misc]
            self._pos = end
            needed -= take
        if not parts:
            empty = np.empty(0)
            return empty, empty, empty
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))  # type: ignore[return-value]

    def apply(self, latencies: np.ndarray) -> np.ndarray:
        base = np.asarray(latencies, dtype=np.int64)
        if self.noise.silent or base.size == 0:
            return base.copy()
        jitter, spike, multiplier = self.draw(base.size)
        factor = 1.0 + self.noise.jitter_stddev_fraction * jitter
        factor = factor * np.where(spike < self.noise.spike_probability, multiplier, 1.0)
        return np.maximum(1, np.rint(base * factor)).astype(np.int64)


class SimSession:
    """
    Single-actor simulated device

    Caches start cold. ``reset`` and ``flush_level`` invalidate lines but never
    rewind the noise stream.
    """

    def __init__(self, spec: DeviceSpec, seed: int = 0):
        self.spec = validate_device_spec(spec)
        self.seed = seed
        self._levels: Dict[str, MemoryLevelSpec] = {level.name: level for level in spec.levels}
        self._instances: Dict[Tuple[str, int], SectorCache] = {}
        self._noise = NoiseStream(spec.noise, seed)
        self._memory_bytes = spec.device_memory.size_bytes
        self._cu_group = {
            cu: index for index, group in enumerate(spec.cu_topology.sl1d_groups) for cu in group
        }

    @property
    def spaces(self) -> List[str]:
        return list(self.spec.logical_spaces)

    def _path(self, space: str, bypass: Iterable[str] = ()) -> List[MemoryLevelSpec]:
        if space not in self.spec.logical_spaces:
            raise InputError(f"Unknown logical space: {space}")
        skipped = frozenset(bypass)
        for name in skipped:
            if name not in self._levels:
                raise UnknownLevelError(name)
        if self.spec.device_memory.name in skipped:
            raise InputError("Device memory cannot be bypassed")

        path = []
        for name in self.spec.logical_spaces[space]:
            if name in skipped:
                continue
            level = self._levels[name]
            path.append(level)
            if not level.is_cache:
                break
        return path

    def _cu_id(self, actor: Actor) -> int:
        if actor.cu_physical_id is not None:
            return actor.cu_physical_id
        active = self.spec.cu_topology.active_cu_ids
        return active[actor.sm_id % len(active)] if active else actor.sm_id

    def _instance_key(self, level: MemoryLevelSpec, actor: Actor) -> int:
        compute = self.spec.compute
        if not 0 <= actor.sm_id < compute.num_sm:
            raise InputError(f"sm_id {actor.sm_id} outside [0, {compute.num_sm})")
        if not 0 <= actor.core_index < compute.cores_per_sm:
            raise InputError(f"core_index {actor.core_index} outside [0, {compute.cores_per_sm})")

        if level.scope is Scope.PER_SM:
            segment = actor.core_index * level.amount // compute.cores_per_sm
            return actor.sm_id * level.amount + segment
        if level.scope is Scope.PER_GPU:
            return actor.sm_id * level.amount // compute.num_sm
        cu_id = self._cu_id(actor)
        if cu_id not in self._cu_group:
            raise InputError(f"CU {cu_id} belongs to no sL1d group")
        return self._cu_group[cu_id]

    def _resolve(
        self, space: str, actor: Actor, bypass: Iterable[str]
    ) -> List[Tuple[MemoryLevelSpec, Optional[SectorCache]]]:
        resolved: List[Tuple[MemoryLevelSpec, Optional[SectorCache]]] = []
        for level in self._path(space, bypass):
            if not level.is_cache:
                resolved.append((level, None))
                continue
            key = (level.name, self._instance_key(level, actor))
            cache = self._instances.get(key)
            if cache is None:
                cache = self._instances[key] = SectorCache(level)
            resolved.append((level, cache))
        return resolved

    def _check_address(self, address: int) -> None:
        if not 0 <= address < self._memory_bytes:
            raise InputError(f"Address {address} outside device memory of {self._memory_bytes} bytes")

    @staticmethod
    def _walk(resolved: List[Tuple[MemoryLevelSpec, Optional[SectorCache]]], address: int) -> int:
        for position, (_, cache) in enumerate(resolved):
            if cache is None or cache.access(address):
                return position
        return len(resolved) - 1

    def access(
        self,
        space: str,
        address: int,
        actor: Actor = Actor(),
        bypass: Iterable[str] = (),
        timed: bool = False,
    ) -> AccessResult:
        """Issue one load"""
        self._check_address(address)
        resolved = self._resolve(space, actor, bypass)
        position = self._walk(resolved, address)
        level = resolved[position][0]
        latency = level.hit_latency_cycles
        if timed:
            latency = int(self._noise.apply(np.array([latency]))[0])
        return AccessResult(
            latency_cycles=latency, serviced_by=level.name, was_hit_at_first_level=position == 0
        )

    def run_chase(
        self,
        space: str,
        base: int,
        array_bytes: int,
        stride: int,
        timed_count: int,
        warmup: bool = True,
        actor: Actor = Actor(),
        bypass: Iterable[str] = (),
    ) -> np.ndarray:
        """
        Run one p-chase phase and return the timed latencies

        The chain visits base, base + stride, ... below base + array_bytes. The
        optional warm-up walks it once untimed; the timed pass then issues
        ``timed_count`` loads from the start of the chain, wrapping around.
        """
        if stride <= 0 or array_bytes < stride:
            raise InputError(f"Invalid chase geometry: array {array_bytes} B, stride {stride} B")
        if timed_count < 0:
            raise InputError("timed_count must be non-negative")
        chain = array_bytes // stride
        self._check_address(base)
        self._check_address(base + (chain - 1) * stride)
        resolved = self._resolve(space, actor, bypass)

        if warmup:
            addresses = base + np.arange(chain, dtype=np.int64) * stride
            if not self._warm_vectorized(resolved, addresses):
                for address in addresses.tolist():
                    self._walk(resolved, address)

        hit_latency = [level.hit_latency_cycles for level, _ in resolved]
        latencies = np.empty(timed_count, dtype=np.int64)
        for i in range(timed_count):
            latencies[i] = hit_latency[self._walk(resolved, base + (i % chain) * stride)]
        return self._noise.apply(latencies)

    @staticmethod
    def _warm_vectorized(
        resolved: List[Tuple[MemoryLevelSpec, Optional[SectorCache]]], addresses: np.ndarray
    ) -> bool:
        """
        Replay one ascending pass in bulk when no touched line is resident yet

        Under that condition each level misses exactly on the first touch of
        every sector, and those misses form the next level's input.
        """
        staged = []
        sequence = addresses
        for _, cache in resolved:
            if cache is None or sequence.size == 0:
                break
            lines = sequence // cache.line_size
            if cache.contains_any(lines):
                return False
            sectors = (sequence % cache.line_size) // cache.fetch_granularity
            keys = lines * cache.sectors_per_line + sectors
            first_touch = np.ones(sequence.size, dtype=bool)
            first_touch[1:] = keys[1:] != keys[:-1]
            unique_lines, inverse = np.unique(lines, return_inverse=True)
            masks = np.zeros(unique_lines.size, dtype=np.int64)
            np.bitwise_or.at(masks, inverse, np.left_shift(np.int64(1), sectors))
            staged.append((cache, unique_lines, masks))
            sequence = sequence[first_touch]

        for cache, unique_lines, masks in staged:
            cache.fill_sequential(unique_lines, masks)
        return True

    def resident_lines(self, level: str) -> int:
        """Number of valid lines held by all instances of a level"""
        return sum(len(cache) for (name, _), cache in self._instances.items() if name == level)

    def reset(self) -> None:
        self._instances.clear()

    def flush_level(self, name: str) -> None:
        if name not in self._levels:
            raise UnknownLevelError(name)
        for (level_name, _), cache in self._instances.items():
            if level_name == name:
                cache.clear()

    def bandwidth(
        self,
        space: str,
        direction: Direction,
        threads_per_block: int,
        num_blocks: int,
        bytes_total: int,
        bypass: Iterable[str] = (),
    ) -> float:
        """Achieved GiB/s of a streaming kernel against the first non-bypassed level"""
        if threads_per_block <= 0 or num_blocks <= 0 or bytes_total <= 0:
            raise InputError("Stream geometry must be positive")
        compute = self.spec.compute
        if threads_per_block > compute.max_threads_per_block:
            raise InputError(
                f"threads_per_block {threads_per_block} exceeds {compute.max_threads_per_block}"
            )
        target = self._path(space, bypass)[0]
        peak = target.peak_read_gibps if Direction(direction) is Direction.READ else target.peak_write_gibps
        if peak is None:
            raise UnsupportedMeasurementError(f"{target.name} has no {Direction(direction).value} bandwidth")

        saturating = compute.num_sm * compute.max_blocks_per_sm
        occupancy = min(1.0, threads_per_block * num_blocks / (saturating * compute.max_threads_per_block))
        contention = min(0.5, max(0, num_blocks - saturating) / (4 * saturating))
        return peak * occupancy * (1.0 - contention)


def create_session(spec: DeviceSpec, seed: int = 0) -> SimSession:
    return SimSession(spec, seed)


def device_info(spec: DeviceSpec) -> ApiInfo:
    """General and compute information plus exactly the API-exposed level values"""
    values: Dict[str, Dict[str, float]] = {}
    for level_name, attribute in spec.api_exposed:
        level = spec.level(level_name)
        value = {
            "size": level.total_size_bytes,
            "latency": level.hit_latency_cycles,
            "read_bw": level.peak_read_gibps,
            "write_bw": level.peak_write_gibps,
            "line_size": level.line_size_bytes,
            "fetch_granularity": level.fetch_granularity_bytes,
            "amount": level.amount,
        }[attribute]
        if value is not None:
            values.setdefault(level_name, {})[attribute] = value

    active = spec.cu_topology.active_cu_ids
    cores = lookup_cores_per_sm(spec.compute_capability)
    compute = spec.compute
    if cores is not None:
        compute = compute.model_copy(update={"cores_per_sm": cores})
    return ApiInfo(
        vendor=spec.vendor,
        model=spec.model,
        clock_rate_khz=spec.clock_rate_khz,
        compute_capability=spec.compute_capability,
        memory_clock_khz=spec.memory_clock_khz,
        bus_width_bits=spec.bus_width_bits,
        compute=compute,
        cores_per_sm_from_lookup=cores is not None,
        cu_physical_ids=list(active) if spec.vendor is Vendor.AMD and active else None,
        values=values,
    )
