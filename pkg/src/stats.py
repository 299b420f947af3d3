"""
Statistical core: two-sample Kolmogorov-Smirnov test, geometric reduction of
latency matrices, single change-point detection and summary statistics.

Everything in this module is a pure function of its arguments.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from src.errors import InputError

logger = logging.getLogger("topoprobe.stats")

# Strictest level first
DEFAULT_ALPHA_GRID: Tuple[float, ...] = (0.001, 0.005, 0.01, 0.05)

# Points required on each side of a split
MIN_SEGMENT = 4
MIN_SERIES_LENGTH = 8

DEFAULT_BOUNDARY_MARGIN = 0.05
DEFAULT_FLATNESS_EPSILON = 0.01


def as_sample(values: Iterable[float], name: str = "sample") -> np.ndarray:
    """Validate latency values and return them as a float array"""
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    arr = arr.ravel()
    if arr.size == 0:
        raise InputError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise InputError(f"{name} contains negative values")
    return arr


@dataclass(frozen=True)
class KSTestResult:
    reject: bool
    statistic: float
    critical: float

    @property
    def margin(self) -> float:
        return self.statistic - self.critical


@dataclass(frozen=True)
class SummaryStats:
    """Latency summary in cycles"""

    mean: float
    p50: float
    p95: float
    stddev: float
    min: float
    max: float
    count: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "p50": self.p50,
            "p95": self.p95,
            "stddev": self.stddev,
            "min": self.min,
            "max": self.max,
            "count": self.count,
        }


class LatencyMatrix:
    """
    Raw result of a size sweep: one row of N timed-load latencies per array size
    """

    def __init__(self, sizes: Sequence[int], latencies: Sequence[Sequence[float]]):
        sizes_arr = np.asarray(sizes, dtype=np.int64).ravel()
        try:
            values = np.asarray(latencies, dtype=float)
        except ValueError as e:
            raise InputError(f"Latency rows must share one length: {e!s}") from e
        if values.ndim != 2:
            raise InputError("Latency rows must share one length")
        if sizes_arr.size == 0 or values.shape[0] != sizes_arr.size:
            raise InputError(
                f"Matrix needs one latency row per size ({sizes_arr.size} sizes, {values.shape[0]} rows)"
            )
        if values.shape[1] == 0:
            raise InputError("Latency rows must not be empty")
        if sizes_arr.size > 1 and np.any(np.diff(sizes_arr) <= 0):
            raise InputError("Array sizes must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InputError("Latencies must be finite and non-negative")
        self.sizes = sizes_arr
        self.values = values

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[int, Sequence[float]]]) -> "LatencyMatrix":
        if not rows:
            raise InputError("Matrix needs at least one row")
        return cls([size for size, _ in rows], [list(lat) for _, lat in rows])

    @property
    def timed_count(self) -> int:
        return int(self.values.shape[1])

    def __len__(self) -> int:
        return int(self.sizes.size)

    def rows(self):
        for size, row in zip(self.sizes, self.values):
            yield int(size), row


@dataclass(frozen=True)
class ReducedSeries:
    sizes: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.scores.size)

    def points(self):
        return [(int(s), float(v)) for s, v in zip(self.sizes, self.scores)]


@dataclass(frozen=True)
class ChangePointResult:
    """
    Detected change point

    ``index`` is the first position of the post-change segment; ``value_bytes``
    is the largest array size before the change (the last size that fits).
    """

    index: int
    value_bytes: int
    significance: float
    ks_statistic: float
    critical: float

    @property
    def confidence(self) -> float:
        return 1.0 - self.significance


class Verdict(str, Enum):
    ACCEPT = "accept"
    WIDEN_LOW = "widen_low"
    WIDEN_HIGH = "widen_high"
    WIDEN_BOTH = "widen_both"


@dataclass(frozen=True)
class BoundaryVerdict:
    verdict: Verdict
    no_change_point: bool = False

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPT


def ks_statistic(a: Iterable[float], b: Iterable[float]) -> float:
    """Supremum distance between the empirical CDFs of two samples"""
    xa = np.sort(as_sample(a, "a"))
    xb = np.sort(as_sample(b, "b"))
    points = np.concatenate([xa, xb])
    cdf_a = np.searchsorted(xa, points, side="right") / xa.size
    cdf_b = np.searchsorted(xb, points, side="right") / xb.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_critical_value(n: int, m: int, alpha: float) -> float:
    """
    Approximate two-sample critical value d_alpha

    The log term is taken by magnitude, -ln(alpha/2), which is the only reading
    that yields a real value for alpha in (0, 1).
    """
    if n < 1 or m < 1:
        raise InputError(f"Sample sizes must be positive (n={n}, m={m})")
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return math.sqrt(0.5 * (n + m) / (n * m) * abs(math.log(alpha / 2.0)))


def ks_two_sample_test(a: Iterable[float], b: Iterable[float], alpha: float = 0.05) -> KSTestResult:
    xa = as_sample(a, "a")
    xb = as_sample(b, "b")
    critical = ks_critical_value(xa.size, xb.size, alpha)
    statistic = ks_statistic(xa, xb)
    return KSTestResult(reject=statistic > critical, statistic=statistic, critical=critical)


def reduce_geometric(matrix: LatencyMatrix) -> ReducedSeries:
    """
    Map every row onto its Euclidean distance from the global minimum latency
    """
    if not isinstance(matrix, LatencyMatrix):
        raise InputError("reduce_geometric expects a LatencyMatrix")
    shifted = matrix.values - matrix.values.min()
    scores = np.sqrt(np.sum(shifted * shifted, axis=1))
    return ReducedSeries(sizes=matrix.sizes.copy(), scores=scores)


def clip_latencies(matrix: LatencyMatrix, ceiling: float) -> LatencyMatrix:
    """Copy of ``matrix`` with every latency capped at ``ceiling``"""
    if not ceiling > 0:
        raise InputError(f"Latency ceiling must be positive, got {ceiling}")
    return LatencyMatrix(matrix.sizes, np.minimum(matrix.values, ceiling))


def _validate_alpha_grid(alpha_grid: Sequence[float]) -> Tuple[float, ...]:
    grid = tuple(float(a) for a in alpha_grid)
    if not grid:
        raise InputError("alpha grid must not be empty")
    if any(not 0.0 < a < 1.0 for a in grid):
        raise InputError(f"alpha grid values must lie in (0, 1): {grid}")
    if list(grid) != sorted(grid):
        raise InputError(f"alpha grid must be sorted ascending: {grid}")
    return grid


def split_statistics(scores: np.ndarray, min_segment: int = MIN_SEGMENT) -> Tuple[np.ndarray, np.ndarray]:
    """K-S statistic of every admissible left/right split of a score series"""
    length = scores.size
    candidates = np.arange(min_segment, length - min_segment + 1)
    stats = np.array([ks_statistic(scores[:i], scores[i:]) for i in candidates], dtype=float)
    return candidates, stats


def detect_change_point(
    series: ReducedSeries,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    min_segment: int = MIN_SEGMENT,
) -> Optional[ChangePointResult]:
    """
    Find the single most significant distribution change in a reduced series

    Every admissible index is a candidate split. Each split is tested at
    alpha / k (k candidates) so that scanning all of them keeps the
    family-wise error at alpha; a fully separated split (D = 1) is tested at
    the plain alpha, so two constant segments always split at their junction.
    The strictest alpha of the grid with at least one rejecting split wins;
    among its rejecting splits the largest statistic-minus-critical margin is
    chosen, the smallest index on ties.
    """
    grid = _validate_alpha_grid(alpha_grid)
    length = len(series)
    if length < max(MIN_SERIES_LENGTH, 2 * min_segment):
        raise InputError(f"Series too short for change-point detection ({length} points)")
    scores = as_sample(series.scores, "scores")

    candidates, stats = split_statistics(scores, min_segment)
    k = candidates.size
    left = candidates.astype(float)
    right = (length - candidates).astype(float)
    spread = 0.5 * (left + right) / (left * right)
    separated = stats >= 1.0 - 1e-12

    for alpha in grid:
        corrected = np.sqrt(spread * abs(math.log(alpha / k / 2.0)))
        plain = np.sqrt(spread * abs(math.log(alpha / 2.0)))
        critical = np.where(separated, plain, corrected)
        margins = stats - critical
        if not np.any(margins > 0):
            continue
        masked = np.where(margins > 0, margins, -np.inf)
        best = int(np.argmax(masked))
        index = int(candidates[best])
        result = ChangePointResult(
            index=index,
            value_bytes=int(series.sizes[index - 1]),
            significance=alpha,
            ks_statistic=float(stats[best]),
            critical=float(critical[best]),
        )
        logger.debug(
            f"Change point at index {index} ({result.value_bytes} B): "
            f"D={result.ks_statistic:.4f} d={result.critical:.4f} alpha={alpha}"
        )
        return result

    logger.debug(f"No change point in {length}-point series at any alpha of {grid}")
    return None


def boundary_outlier_check(
    series: ReducedSeries,
    cp: Optional[ChangePointResult],
    interval: Tuple[int, int],
    margin: float = DEFAULT_BOUNDARY_MARGIN,
    flatness_epsilon: float = DEFAULT_FLATNESS_EPSILON,
    reference_range: Optional[float] = None,
) -> BoundaryVerdict:
    """
    Decide whether a sweep interval has to be widened

    ``reference_range`` is the score range seen while searching the interval;
    without it the series' own largest score is used.
    """
    lo, hi = interval
    if lo >= hi:
        raise InputError(f"Interval lower bound must be below upper bound: {interval}")
    band = margin * (hi - lo)

    def _edge_verdict(position: float) -> Verdict:
        near_low = position - lo <= band
        near_high = hi - position <= band
        if near_low and near_high:
            return Verdict.WIDEN_BOTH
        if near_low:
            return Verdict.WIDEN_LOW
        if near_high:
            return Verdict.WIDEN_HIGH
        return Verdict.ACCEPT

    if cp is not None:
        return BoundaryVerdict(_edge_verdict(cp.value_bytes))

    scores = np.asarray(series.scores, dtype=float)
    spread = float(scores.max() - scores.min()) if scores.size else 0.0
    reference = reference_range if reference_range is not None else float(np.max(np.abs(scores), initial=0.0))
    if reference <= 0.0 or spread < flatness_epsilon * reference:
        return BoundaryVerdict(Verdict.ACCEPT, no_change_point=True)

    if scores.size > 1:
        jump = int(np.argmax(np.abs(np.diff(scores)))) + 1
        verdict = _edge_verdict(float(series.sizes[jump - 1]))
        if verdict is not Verdict.ACCEPT:
            return BoundaryVerdict(verdict, no_change_point=True)
    return BoundaryVerdict(Verdict.WIDEN_BOTH, no_change_point=True)


def nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    rank = max(1, math.ceil(percentile / 100.0 * sorted_values.size))
    return float(sorted_values[rank - 1])


def summary_stats(sample: Iterable[float]) -> SummaryStats:
    values = np.sort(as_sample(sample))
    return SummaryStats(
        mean=float(values.mean()),
        p50=nearest_rank(values, 50),
        p95=nearest_rank(values, 95),
        stddev=float(values.std()),
        min=float(values[0]),
        max=float(values[-1]),
        count=int(values.size),
    )


def trim_spikes(sample: Iterable[float], factor: float = 3.0) -> np.ndarray:
    """Drop measurements above ``factor`` times the median"""
    values = as_sample(sample)
    median = nearest_rank(np.sort(values), 50)
    if median <= 0:
        return values
    return values[values <= factor * median]
