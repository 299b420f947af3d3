"""
Measurement workflows turning pointer-chase traces into memory-element attributes

Every probe talks to a MeasurementBackend only. Hit/miss decisions use the
midpoint between the element's own hit latency and the latency of the next
level on its miss path, both measured by the caller with small resident chases.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.backend import MIN_STRIDE, MeasurementBackend, PChasePlan, StreamPlan, Trace
from src.device import ApiInfo, ComputeSpec, Vendor
from src.errors import InputError, UnboundedSearchError, UnsupportedMeasurementError
from src.memsim import Actor, Direction
from src.stats import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BOUNDARY_MARGIN,
    DEFAULT_FLATNESS_EPSILON,
    LatencyMatrix,
    Verdict,
    ReducedSeries,
    boundary_outlier_check,
    clip_latencies,
    detect_change_point,
    reduce_geometric,
    summary_stats,
    trim_spikes,
)

logger = logging.getLogger("topoprobe.probes")

PARTNER_ALIGNMENT = 65536

AttributeValue = Union[int, float, List[str], List[List[int]]]


class ProbeSettings(BaseModel):
    """Tunables shared by all probes"""

    model_config = ConfigDict(frozen=True)

    timed_count: int = Field(default=512, ge=16)
    alpha_grid: Tuple[float, ...] = DEFAULT_ALPHA_GRID
    reference_array_bytes: int = 1024
    search_start_bytes: int = 1024
    search_cap_bytes: int = 1024 * 1024
    search_stride_bytes: int = 32
    min_miss_fraction: float = 0.02
    narrow_steps: int = 16
    max_widenings: int = 3
    boundary_margin: float = DEFAULT_BOUNDARY_MARGIN
    flatness_epsilon: float = DEFAULT_FLATNESS_EPSILON
    space_caps: Dict[str, int] = Field(default_factory=lambda: {"constant": 65536})
    fetch_granularity_cap_bytes: int = 1024
    fallback_stride_bytes: int = 64
    scratchpad_stride_bytes: int = 4
    latency_array_strides: int = 256
    spike_trim_factor: float = 3.0
    line_sweep_points: int = 9
    line_lookahead: int = 2
    line_max_stride_bytes: int = 8192
    sharing_fill_fraction: float = 0.9

    @field_validator("alpha_grid")
    @classmethod
    def _check_alpha_grid(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value or any(not 0.0 < a < 1.0 for a in value):
            raise ValueError("alpha values must lie in (0, 1)")
        return tuple(sorted(value))

    def space_cap(self, space: str) -> Optional[int]:
        return self.space_caps.get(space)


class Method(str, Enum):
    API = "api"
    BENCHMARK = "benchmark"
    LOOKUP = "lookup"


class AttributeResult(BaseModel):
    """
    Outcome of one probe

    ``value`` is None for inconclusive results, which always carry confidence 0
    and a ``detail`` explaining why. ``capped`` marks results that are bounded
    by a known space limit rather than by a failed measurement.
    """

    model_config = ConfigDict(frozen=True)

    value: Optional[AttributeValue] = None
    unit: str = "B"
    confidence: float = Field(default=0.0, ge=0.0, le=1.0)
    method: Method = Method.BENCHMARK
    detail: Optional[str] = None
    stats: Optional[Dict[str, Union[int, float]]] = None
    capped: bool = False
    lower_bound: Optional[int] = None

    @property
    def inconclusive(self) -> bool:
        return self.value is None

    @classmethod
    def from_api(cls, value: AttributeValue, unit: str) -> "AttributeResult":
        return cls(value=value, unit=unit, confidence=1.0, method=Method.API)

    @classmethod
    def inconclusive_result(
        cls, unit: str, detail: str, capped: bool = False, lower_bound: Optional[int] = None
    ) -> "AttributeResult":
        return cls(unit=unit, confidence=0.0, detail=detail, capped=capped, lower_bound=lower_bound)


@dataclass(frozen=True)
class ProbeTarget:
    """A memory element as seen through one logical space"""

    element: str
    space: str
    bypass: FrozenSet[str] = frozenset()
    hit_latency: float = 0.0
    miss_latency: Optional[float] = None
    actor: Actor = field(default_factory=Actor)
    is_cache: bool = True

    def plan(self, array_bytes: int, stride: int, timed_count: int, **kwargs) -> PChasePlan:
        return PChasePlan(
            space=self.space,
            array_bytes=array_bytes,
            stride_bytes=stride,
            timed_count=timed_count,
            bypass=self.bypass,
            actor=kwargs.pop("actor", self.actor),
            **kwargs,
        )


@dataclass
class SharingResult:
    """Partition of the compared elements into physically shared groups"""

    groups: List[List[str]]
    unknown_pairs: List[Tuple[str, str]] = field(default_factory=list)

    def shared_with(self, name: str) -> List[str]:
        for group in self.groups:
            if name in group:
                return [other for other in group if other != name]
        return []


@dataclass
class Sl1dSharing:
    groups: List[List[int]]

    @property
    def exclusive(self) -> List[int]:
        return [group[0] for group in self.groups if len(group) == 1]


def _align_down(value: int, alignment: int) -> int:
    return (value // alignment) * alignment


def partner_base(array_bytes: int) -> int:
    """Base address for a second array placed after one starting at 0"""
    return (array_bytes // PARTNER_ALIGNMENT + 2) * PARTNER_ALIGNMENT


def classify_hit_miss(
    latencies: Union[Trace, Sequence[float], np.ndarray], hit_latency: float, miss_latency: float
) -> np.ndarray:
    """
    Label each load; True marks a miss

    A load is a miss when its latency lies above the midpoint of the two
    reference latencies.
    """
    if miss_latency <= hit_latency:
        raise InputError(
            f"Miss reference ({miss_latency}) must exceed hit reference ({hit_latency})"
        )
    values = latencies.latencies if isinstance(latencies, Trace) else np.asarray(latencies)
    return np.asarray(values, dtype=float) > (hit_latency + miss_latency) / 2.0


def _miss_fraction(trace: Trace, target: ProbeTarget) -> float:
    if target.miss_latency is None:
        raise InputError(f"{target.element} has no miss reference")
    misses = classify_hit_miss(trace, target.hit_latency, target.miss_latency)
    return float(misses.mean()) if misses.size else 0.0


def measure_reference_latency(
    backend: MeasurementBackend,
    space: str,
    bypass: FrozenSet[str] = frozenset(),
    settings: Optional[ProbeSettings] = None,
    actor: Optional[Actor] = None,
) -> float:
    """Median latency of a small chase that stays resident in the first level"""
    settings = settings or ProbeSettings()
    plan = PChasePlan(
        space=space,
        array_bytes=settings.reference_array_bytes,
        stride_bytes=settings.search_stride_bytes,
        timed_count=settings.timed_count,
        bypass=bypass,
        actor=actor or Actor(),
    )
    trace = backend.run_pchase(plan)
    return summary_stats(trace.latencies).p50


def _search_cap(target: ProbeTarget, settings: ProbeSettings, cap: Optional[int]) -> int:
    limit = cap if cap is not None else settings.search_cap_bytes
    space_cap = settings.space_cap(target.space)
    if space_cap is not None:
        limit = min(limit, space_cap)
    return _align_down(limit, settings.search_stride_bytes)


def find_search_interval(
    backend: MeasurementBackend,
    target: ProbeTarget,
    settings: Optional[ProbeSettings] = None,
    cap: Optional[int] = None,
) -> Tuple[int, int]:
    """
    Bracket a cache size between an all-hit and a missing array size

    Doubles from ``search_start_bytes`` until the chase shows misses, then
    halves the bracket until it spans at most ``narrow_steps`` strides.

    Raises:
        UnboundedSearchError: no misses up to the search cap
    """
    settings = settings or ProbeSettings()
    stride = settings.search_stride_bytes
    limit = _search_cap(target, settings, cap)
    start = min(settings.search_start_bytes, limit)

    def shows_misses(size: int) -> bool:
        trace = backend.run_pchase(target.plan(size, stride, settings.timed_count))
        fraction = _miss_fraction(trace, target)
        logger.debug(f"{target.element}: {size} B -> miss fraction {fraction:.3f}")
        return fraction > settings.min_miss_fraction

    lo: Optional[int] = None
    size = start
    while True:
        probe = min(size, limit)
        if shows_misses(probe):
            hi = probe
            break
        lo = probe
        if probe >= limit:
            raise UnboundedSearchError((start, limit))
        size *= 2

    if lo is None:
        lo = max(stride, _align_down(hi // 2, stride))
        if lo >= hi:
            raise UnboundedSearchError(
                (stride, hi), f"{target.element} misses even at the smallest array"
            )

    while hi - lo > settings.narrow_steps * stride:
        mid = lo + _align_down((hi - lo) // 2, stride)
        if mid <= lo:
            break
        if shows_misses(mid):
            hi = mid
        else:
            lo = mid
    logger.info(f"{target.element}: size lies in ({lo}, {hi}] B")
    return lo, hi


def sweep_series(matrix: LatencyMatrix, miss_latency: Optional[float]) -> ReducedSeries:
    """Reduce a sweep after capping spikes at the miss reference"""
    if miss_latency is not None:
        matrix = clip_latencies(matrix, miss_latency)
    return reduce_geometric(matrix)


def size_sweep(
    backend: MeasurementBackend,
    target: ProbeTarget,
    interval: Tuple[int, int],
    step: int,
    settings: Optional[ProbeSettings] = None,
) -> LatencyMatrix:
    """One warm-up plus timed chase per array size from lo to hi, both inclusive"""
    settings = settings or ProbeSettings()
    lo, hi = interval
    if step <= 0 or lo <= 0 or hi < lo:
        raise InputError(f"Invalid sweep interval {interval} with step {step}")
    sizes = range(lo, hi + 1, step)
    rows = [
        backend.run_pchase(target.plan(size, step, settings.timed_count)).latencies
        for size in sizes
    ]
    return LatencyMatrix(list(sizes), rows)


def measure_cache_size(
    backend: MeasurementBackend,
    target: ProbeTarget,
    settings: Optional[ProbeSettings] = None,
    api_info: Optional[ApiInfo] = None,
    api_level: Optional[str] = None,
    cap: Optional[int] = None,
    on_sweep: Optional[Callable[[LatencyMatrix], None]] = None,
) -> AttributeResult:
    """
    Size of a cache from the change point of a latency sweep

    The sweep covers the search bracket padded by its own width on both sides
    and is widened (at most ``max_widenings`` times) while the boundary check
    flags a change point at an edge.
    """
    settings = settings or ProbeSettings()
    if api_info is not None and api_level is not None and api_info.has(api_level, "size"):
        return AttributeResult.from_api(api_info.value(api_level, "size"), "B")
    if target.miss_latency is None:
        raise UnsupportedMeasurementError(f"{target.element} has no miss reference")

    step = settings.search_stride_bytes
    limit = _search_cap(target, settings, cap)
    try:
        lo, hi = find_search_interval(backend, target, settings, cap=cap)
    except UnboundedSearchError as e:
        capped = settings.space_cap(target.space) is not None and e.scanned[1] >= limit
        logger.warning(f"{target.element}: no misses up to {e.scanned[1]} B")
        return AttributeResult.inconclusive_result(
            "B",
            f"> {e.scanned[1]} B, no misses within the search cap",
            capped=capped,
            lower_bound=e.scanned[1],
        )

    width = hi - lo
    sweep_lo = max(step, lo - width)
    sweep_hi = min(limit, hi + width)
    reference_range = (target.miss_latency - target.hit_latency) * math.sqrt(settings.timed_count)

    for attempt in range(settings.max_widenings + 1):
        matrix = size_sweep(backend, target, (sweep_lo, sweep_hi), step, settings)
        if on_sweep is not None:
            on_sweep(matrix)
        series = sweep_series(matrix, target.miss_latency)
        cp = detect_change_point(series, settings.alpha_grid)
        verdict = boundary_outlier_check(
            series,
            cp,
            (sweep_lo, sweep_hi),
            margin=settings.boundary_margin,
            flatness_epsilon=settings.flatness_epsilon,
            reference_range=reference_range,
        )
        if verdict.accepted:
            if cp is None:
                break
            logger.info(
                f"{target.element}: size {cp.value_bytes} B (D={cp.ks_statistic:.3f}, "
                f"alpha={cp.significance})"
            )
            return AttributeResult(
                value=cp.value_bytes,
                unit="B",
                confidence=cp.confidence,
                detail=f"D={cp.ks_statistic:.4f} critical={cp.critical:.4f} "
                f"alpha={cp.significance} interval=[{sweep_lo}, {sweep_hi}]",
            )
        if attempt == settings.max_widenings:
            break

        span = sweep_hi - sweep_lo
        new_lo, new_hi = sweep_lo, sweep_hi
        if verdict.verdict in (Verdict.WIDEN_LOW, Verdict.WIDEN_BOTH):
            new_lo = max(step, sweep_lo - span)
        if verdict.verdict in (Verdict.WIDEN_HIGH, Verdict.WIDEN_BOTH):
            new_hi = min(limit, sweep_hi + span)
        if (new_lo, new_hi) == (sweep_lo, sweep_hi):
            break
        logger.debug(f"{target.element}: widening sweep to [{new_lo}, {new_hi}]")
        sweep_lo, sweep_hi = new_lo, new_hi

    return AttributeResult.inconclusive_result("B", "no change point after widening the sweep")


def measure_fetch_granularity(
    backend: MeasurementBackend,
    target: ProbeTarget,
    size_bytes: Optional[int],
    settings: Optional[ProbeSettings] = None,
) -> AttributeResult:
    """
    Smallest stride at which a cold chase misses on every load

    The pass runs without warm-up over an array larger than the cache, so a
    load only hits when an earlier load of the same pass fetched its bytes.
    """
    settings = settings or ProbeSettings()
    if target.miss_latency is None:
        raise UnsupportedMeasurementError(f"{target.element} has no miss reference")

    cap = settings.fetch_granularity_cap_bytes
    space_cap = settings.space_cap(target.space)
    if size_bytes:
        array = size_bytes + size_bytes // 8
    else:
        array = space_cap or settings.timed_count * cap
    if space_cap is not None:
        array = min(array, space_cap)
    array = max(array, cap)

    stride = MIN_STRIDE
    while stride <= cap:
        count = min(settings.timed_count, array // stride)
        trace = backend.run_pchase(target.plan(array, stride, count, warmup=False))
        misses = classify_hit_miss(trace, target.hit_latency, target.miss_latency)
        if misses.all():
            logger.info(f"{target.element}: fetch granularity {stride} B")
            return AttributeResult(
                value=stride, unit="B", confidence=min(1.0, count / 16.0), detail=f"{count} loads"
            )
        stride += MIN_STRIDE
    return AttributeResult.inconclusive_result("B", f"loads still hit at stride {cap} B")


def measure_load_latency(
    backend: MeasurementBackend,
    target: ProbeTarget,
    fetch_granularity: Optional[int],
    settings: Optional[ProbeSettings] = None,
    size_bytes: Optional[int] = None,
):
    """
    Latency distribution of loads served by the element

    Caches are chased over 256 fetch-granularity strides (never more than the
    cache holds), scratchpads and device memory with a 4-byte stride.

    Returns:
        SummaryStats of the spike-trimmed sample
    """
    settings = settings or ProbeSettings()
    if not target.is_cache:
        stride = settings.scratchpad_stride_bytes
    else:
        stride = fetch_granularity or settings.fallback_stride_bytes
    array = settings.latency_array_strides * stride
    if target.is_cache and size_bytes:
        array = min(array, _align_down(size_bytes, stride))
    space_cap = settings.space_cap(target.space)
    if space_cap is not None:
        array = min(array, _align_down(space_cap, stride))
    if array < stride:
        raise InputError(f"{target.element}: no room for a {stride} B stride chase")

    trace = backend.run_pchase(target.plan(array, stride, settings.timed_count))
    trimmed = trim_spikes(trace.latencies, settings.spike_trim_factor)
    return summary_stats(trimmed)


def weighted_distance(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(weights * np.abs(x - y)) / np.sum(weights))


def measure_cache_line_size(
    backend: MeasurementBackend,
    target: ProbeTarget,
    size_bytes: int,
    fetch_granularity: int,
    settings: Optional[ProbeSettings] = None,
) -> AttributeResult:
    """
    Cache line size from how sweeps at growing strides move between two references

    The pivot stride (half the fetch granularity) thrashes every line once the
    array outgrows the cache; strides far above the line size keep the number
    of touched lines below capacity. Each candidate stride is scored by its
    weighted distance to both references and the line size is the largest power
    of two not above the stride where the score jumps the most.
    """
    settings = settings or ProbeSettings()
    if size_bytes <= 0 or fetch_granularity <= 0:
        raise InputError("line size needs a positive size and fetch granularity")

    half = max(MIN_STRIDE, fetch_granularity // 2)
    points = settings.line_sweep_points
    weights = np.arange(1, points + 1, dtype=float)
    space_cap = settings.space_cap(target.space)

    def sweep_scores(stride: int) -> np.ndarray:
        sizes = [size_bytes + stride * t for t in range(points)]
        if space_cap is not None and sizes[-1] > space_cap:
            raise UnboundedSearchError((size_bytes, space_cap), "line sweep exceeds the space cap")
        rows = [
            backend.run_pchase(target.plan(size, stride, settings.timed_count)).latencies
            for size in sizes
        ]
        return sweep_series(LatencyMatrix(sizes, rows), target.miss_latency).scores

    try:
        pivot = sweep_scores(half)
        reference = float(np.average(pivot, weights=weights))
        max_stride = 8 * fetch_granularity
        upper = sweep_scores(max_stride)
        while weighted_distance(upper, pivot, weights) <= 0.5 * reference:
            max_stride *= 2
            if max_stride > settings.line_max_stride_bytes:
                return AttributeResult.inconclusive_result(
                    "B", "pivot and MAX sweeps are indistinguishable"
                )
            upper = sweep_scores(max_stride)

        strides: List[int] = []
        scores: List[float] = []
        first_flip: Optional[int] = None
        stride = 2 * half
        while stride < max_stride:
            current = sweep_scores(stride)
            to_pivot = weighted_distance(current, pivot, weights)
            to_max = weighted_distance(current, upper, weights)
            total = to_pivot + to_max
            score = to_pivot / total if total > 0 else 0.0
            strides.append(stride)
            scores.append(score)
            logger.debug(f"{target.element}: stride {stride} B score {score:.3f}")
            if first_flip is None and score > 0.5:
                first_flip = len(scores) - 1
            if first_flip is not None and len(scores) - 1 - first_flip >= settings.line_lookahead:
                break
            stride += half
    except UnboundedSearchError as e:
        return AttributeResult.inconclusive_result("B", str(e))

    if first_flip is None:
        return AttributeResult.inconclusive_result("B", f"no stride below {max_stride} B behaves like MAX")

    adjusted = np.asarray(scores)
    adjusted[first_flip:] = np.maximum.accumulate(adjusted[first_flip:])
    jumps = np.diff(np.concatenate([[0.0], adjusted]))
    best = int(np.argmax(jumps))
    line = 1 << int(math.floor(math.log2(strides[best])))
    logger.info(f"{target.element}: line size {line} B (score jump at stride {strides[best]} B)")
    return AttributeResult(
        value=line,
        unit="B",
        confidence=float(min(1.0, adjusted[best])),
        detail=f"score jump {jumps[best]:.3f} at stride {strides[best]} B, MAX stride {max_stride} B",
    )


def _evicts(
    backend: MeasurementBackend,
    first: PChasePlan,
    second: PChasePlan,
    hit_latency: float,
    miss_latency: float,
    timed_count: int,
) -> float:
    """Warm ``first``, warm ``second``, then time ``first`` again; returns its miss fraction"""
    timed = first.model_copy(
        update={"timed_count": min(timed_count, first.chain_length), "warmup": False}
    )
    warm_first = first.model_copy(update={"timed_count": 0})
    warm_second = second.model_copy(update={"timed_count": 0})
    traces = backend.run_paired_phase_sequence([warm_first, warm_second, timed])
    misses = classify_hit_miss(traces[-1], hit_latency, miss_latency)
    return float(misses.mean())


def measure_amount(
    backend: MeasurementBackend,
    target: ProbeTarget,
    size_bytes: int,
    cores_per_sm: int,
    stride: int,
    settings: Optional[ProbeSettings] = None,
) -> AttributeResult:
    """
    Number of independent instances of a per-SM cache

    Core 0 fills 90% of the cache, core k fills another 90% and core 0 reads
    its array again. When core 0 still hits, core k uses another instance and
    the SM holds cores_per_sm / k of them.
    """
    settings = settings or ProbeSettings()
    if not backend.capabilities().paired_actors:
        raise UnsupportedMeasurementError("amount needs paired actors")
    if target.miss_latency is None:
        raise UnsupportedMeasurementError(f"{target.element} has no miss reference")

    array = _align_down(int(size_bytes * settings.sharing_fill_fraction), stride)
    if array < stride:
        raise InputError(f"{target.element}: {size_bytes} B too small for stride {stride} B")
    sm_id = target.actor.sm_id
    base_b = partner_base(array)
    lowest = 1.0
    k = 1
    while k < cores_per_sm:
        first = target.plan(array, stride, 0, actor=Actor(sm_id=sm_id, core_index=0))
        second = target.plan(
            array, stride, 0, actor=Actor(sm_id=sm_id, core_index=k), base_address=base_b
        )
        fraction = _evicts(
            backend, first, second, target.hit_latency, target.miss_latency, settings.timed_count
        )
        logger.debug(f"{target.element}: core {k} -> miss fraction {fraction:.3f}")
        if fraction < 0.5:
            amount = cores_per_sm // k
            logger.info(f"{target.element}: {amount} instances per SM")
            return AttributeResult(
                value=amount, unit="count", confidence=1.0 - fraction, detail=f"first independent core {k}"
            )
        lowest = min(lowest, 1.0 - fraction)
        k *= 2
    return AttributeResult(
        value=1, unit="count", confidence=1.0 - lowest, detail="every core pair shares the cache"
    )


def nearest_integer_fraction(total: float, measured: float) -> Tuple[int, float]:
    """
    Integer k for which total / k is closest to the measured size

    Returns:
        (k, confidence) where confidence is 1 minus the relative deviation
    """
    if total <= 0 or measured <= 0:
        raise InputError("sizes must be positive")
    upper = max(1, int(math.ceil(total / measured)) + 1)
    best = min(range(1, upper + 1), key=lambda k: (abs(total / k - measured), k))
    expected = total / best
    confidence = float(np.clip(1.0 - abs(measured - expected) / expected, 0.0, 1.0))
    return best, confidence


def measure_l2_segments(
    backend: MeasurementBackend,
    api_info: ApiInfo,
    target: Optional[ProbeTarget] = None,
    settings: Optional[ProbeSettings] = None,
    segment_size: Optional[AttributeResult] = None,
) -> AttributeResult:
    """
    Number of L2 segments

    amd-like devices report it through the API. On nvidia-like devices the
    size reachable from one SM is measured and matched against the API total.
    """
    settings = settings or ProbeSettings()
    if api_info.vendor is Vendor.AMD:
        amount = api_info.value("L2", "amount")
        if amount is None:
            return AttributeResult.inconclusive_result("count", "API does not report L2 segments")
        return AttributeResult.from_api(amount, "count")

    total = api_info.value("L2", "size")
    if total is None:
        raise UnsupportedMeasurementError("L2 segments need the API total L2 size")
    if segment_size is None:
        if target is None:
            raise InputError("a probe target is required to measure the segment size")
        segment_size = measure_cache_size(backend, target, settings, cap=int(total))
    if segment_size.inconclusive:
        return AttributeResult.inconclusive_result("count", "segment size is inconclusive")

    segments, confidence = nearest_integer_fraction(float(total), float(segment_size.value))
    logger.info(f"L2: {segments} segments of {segment_size.value} B (total {total} B)")
    return AttributeResult(
        value=segments,
        unit="count",
        confidence=confidence,
        detail=f"segment size {segment_size.value} B of {total} B",
    )


def _union_find_groups(names: Sequence, pairs: Sequence[Tuple[int, int]]) -> List[List]:
    parent = list(range(len(names)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    groups: Dict[int, List] = {}
    for index, name in enumerate(names):
        groups.setdefault(find(index), []).append(name)
    return [groups[root] for root in sorted(groups)]


def measure_physical_sharing(
    backend: MeasurementBackend,
    targets: Sequence[ProbeTarget],
    sizes: Mapping[str, Optional[int]],
    strides: Optional[Mapping[str, int]] = None,
    settings: Optional[ProbeSettings] = None,
) -> SharingResult:
    """
    Which logical spaces are served by the same physical cache

    For each pair one actor fills the smaller element, then the other, and
    reads the first array again; misses mean the second fill evicted it.
    Pairs with an unknown size are left out.
    """
    settings = settings or ProbeSettings()
    if not backend.capabilities().paired_actors:
        raise UnsupportedMeasurementError("physical sharing needs paired phase sequences")
    strides = strides or {}
    names = [t.element for t in targets]
    shared: List[Tuple[int, int]] = []
    unknown: List[Tuple[str, str]] = []

    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            a, b = targets[i], targets[j]
            size_a, size_b = sizes.get(a.element), sizes.get(b.element)
            if not size_a or not size_b or a.miss_latency is None or b.miss_latency is None:
                unknown.append((a.element, b.element))
                continue
            if size_b < size_a:
                a, b, size_a, size_b = b, a, size_b, size_a
            stride_a = strides.get(a.element, settings.search_stride_bytes)
            stride_b = strides.get(b.element, settings.search_stride_bytes)
            array_a = _align_down(int(size_a * settings.sharing_fill_fraction), stride_a)
            array_b = _align_down(int(size_b * settings.sharing_fill_fraction), stride_b)
            first = a.plan(array_a, stride_a, 0)
            second = b.plan(array_b, stride_b, 0, actor=a.actor, base_address=partner_base(array_a))
            fraction = _evicts(
                backend, first, second, a.hit_latency, float(a.miss_latency), settings.timed_count
            )
            logger.debug(f"{a.element} vs {b.element}: miss fraction {fraction:.3f}")
            if fraction > 0.5:
                shared.append((i, j))

    groups = _union_find_groups(names, shared)
    logger.info(f"Physical sharing groups: {groups}")
    return SharingResult(groups=groups, unknown_pairs=unknown)


def measure_sl1d_sharing(
    backend: MeasurementBackend,
    target: ProbeTarget,
    active_cu_ids: Sequence[int],
    size_bytes: int,
    stride: int,
    settings: Optional[ProbeSettings] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> Sl1dSharing:
    """
    Groups of CUs sharing one scalar L1 data cache

    Every pair of active CUs runs the fill/fill/reread sequence on the scalar
    space; ``active_cu_ids`` maps logical CU index to physical id.
    """
    settings = settings or ProbeSettings()
    if not backend.capabilities().paired_actors:
        raise UnsupportedMeasurementError("sL1d sharing needs paired actors")
    if target.miss_latency is None:
        raise UnsupportedMeasurementError(f"{target.element} has no miss reference")

    array = _align_down(int(size_bytes * settings.sharing_fill_fraction), stride)
    base_b = partner_base(array)
    ids = list(active_cu_ids)
    shared: List[Tuple[int, int]] = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            first = target.plan(array, stride, 0, actor=Actor(sm_id=i, cu_physical_id=ids[i]))
            second = target.plan(
                array,
                stride,
                0,
                actor=Actor(sm_id=j, cu_physical_id=ids[j]),
                base_address=base_b,
            )
            fraction = _evicts(
                backend, first, second, target.hit_latency, target.miss_latency, settings.timed_count
            )
            if fraction > 0.5:
                shared.append((i, j))
        if progress is not None:
            progress(i)

    groups = _union_find_groups(ids, shared)
    groups = sorted((sorted(group) for group in groups), key=lambda group: group[0])
    logger.info(f"sL1d: {len(groups)} groups over {len(ids)} active CUs")
    return Sl1dSharing(groups=groups)


def measure_bandwidth(
    backend: MeasurementBackend,
    target: ProbeTarget,
    direction: Direction,
    compute: ComputeSpec,
) -> AttributeResult:
    """Achieved bandwidth with every SM saturated at maximum block size"""
    threads = compute.max_threads_per_block
    blocks = compute.num_sm * compute.max_blocks_per_sm
    plan = StreamPlan(
        space=target.space,
        direction=direction,
        threads_per_block=threads,
        num_blocks=blocks,
        bytes_total=threads * blocks * 1024,
        bypass=target.bypass,
    )
    achieved = backend.run_stream(plan)
    logger.info(f"{target.element}: {Direction(direction).value} bandwidth {achieved:.1f} GiB/s")
    return AttributeResult(
        value=float(achieved),
        unit="GiB/s",
        confidence=1.0,
        detail=f"{blocks} blocks x {threads} threads",
    )
