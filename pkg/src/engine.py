"""
Runs every planned benchmark against fresh backends and collects the results
"""

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from src.backend import BackendCapabilities, MeasurementBackend
from src.device import ApiInfo, Vendor
from src.errors import InconclusiveMeasurement, InputError, TopoprobeError
from src.memsim import Direction
from src.planner import (
    SHARING_CANDIDATES,
    UNITS,
    CellMethod,
    ElementInfo,
    PlannedCell,
    element_catalog,
    miss_reference,
    plan_benchmarks,
    present_elements,
)
from src.probes import (
    AttributeResult,
    ProbeSettings,
    ProbeTarget,
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
)
from src.stats import LatencyMatrix

logger = logging.getLogger("topoprobe.engine")

BackendFactory = Callable[[int], MeasurementBackend]
ResultKey = Tuple[str, str]


@dataclass
class ElementOutcome:
    name: str
    results: Dict[str, AttributeResult] = field(default_factory=dict)
    target: Optional[ProbeTarget] = None
    sweep: Optional[LatencyMatrix] = None
    # Capacity of one instance, used by the dependent probes
    working_size: Optional[int] = None
    fetch_granularity: Optional[int] = None


@dataclass
class BenchmarkRun:
    """Everything a report is assembled from"""

    api_info: ApiInfo
    plan: List[PlannedCell]
    present: List[str]
    results: Dict[ResultKey, AttributeResult]
    sweeps: Dict[str, LatencyMatrix]
    backend_id: str

    @property
    def inconclusive(self) -> List[ResultKey]:
        """Inconclusive results not explained by a space limit"""
        return [key for key, r in self.results.items() if r.inconclusive and not r.capped]


class BenchmarkEngine:
    """
    Executes the benchmark plan

    Each element gets its own backend seeded from the run seed and the element
    name, so results do not depend on scheduling or worker count.
    """

    def __init__(
        self,
        backend_factory: BackendFactory,
        settings: Optional[ProbeSettings] = None,
        seed: int = 0,
        workers: int = 1,
        only: Optional[Sequence[str]] = None,
        show_progress: bool = False,
    ):
        if workers < 1:
            raise InputError("workers must be at least 1")
        self.backend_factory = backend_factory
        self.settings = settings or ProbeSettings()
        self.seed = seed
        self.workers = workers
        self.only = list(only) if only is not None else None
        self.show_progress = show_progress

        self.api_info: Optional[ApiInfo] = None
        self.capabilities: Optional[BackendCapabilities] = None
        self.plan: List[PlannedCell] = []

    def seed_for(self, name: str) -> int:
        return (self.seed * 1_000_003 + zlib.crc32(name.encode("utf-8"))) % (2**32)

    @property
    def vendor(self) -> Vendor:
        assert self.api_info is not None
        return self.api_info.vendor

    def _cells(self, name: str) -> Dict[str, CellMethod]:
        return {c.attribute: c.method for c in self.plan if c.element == name}

    def _build_target(self, backend: MeasurementBackend, element: ElementInfo) -> ProbeTarget:
        assert self.capabilities is not None
        caps = self.capabilities
        bypass = element.bypass_for(caps.levels)
        hit = measure_reference_latency(backend, element.space, bypass, self.settings)
        miss = None
        reference = miss_reference(self.vendor, element, caps.spaces, caps.levels)
        if element.is_cache and reference is not None:
            miss = measure_reference_latency(
                backend, reference.space, reference.bypass_for(caps.levels), self.settings
            )
            if miss <= hit:
                raise InconclusiveMeasurement(
                    f"{element.name}: miss reference {miss} does not exceed hit reference {hit}"
                )
        logger.debug(f"{element.name}: hit {hit} cycles, miss {miss} cycles")
        return ProbeTarget(
            element=element.name,
            space=element.space,
            bypass=bypass,
            hit_latency=hit,
            miss_latency=miss,
            is_cache=element.is_cache,
        )

    def _api_value(self, element: ElementInfo, attribute: str) -> Optional[float]:
        assert self.api_info is not None
        if element.level is None:
            return None
        return self.api_info.value(element.level, attribute)

    def _run_element(self, element: ElementInfo) -> ElementOutcome:
        """Run the benchmark cells of one element in dependency order"""
        assert self.api_info is not None
        cells = self._cells(element.name)
        bench = {a for a, m in cells.items() if m is CellMethod.BENCHMARK and a != "shared_with"}
        needs_target = bool(bench) or cells.get("shared_with") is CellMethod.BENCHMARK
        outcome = ElementOutcome(name=element.name)
        if not needs_target:
            return outcome

        backend = self.backend_factory(self.seed_for(element.name))
        try:
            outcome.target = self._build_target(backend, element)
        except TopoprobeError as e:
            logger.error(f"Reference latencies for {element.name} failed: {e!s}")
            for attribute in bench:
                outcome.results[attribute] = AttributeResult.inconclusive_result(UNITS[attribute], str(e))
            return outcome
        target = outcome.target
        results = outcome.results
        compute = self.api_info.compute
        nvidia_l2 = self.vendor is Vendor.NVIDIA and element.name == "L2"

        def attempt(attribute: str, probe: Callable[[], AttributeResult]) -> AttributeResult:
            try:
                result = probe()
            except TopoprobeError as e:
                logger.warning(f"{element.name}.{attribute} is inconclusive: {e!s}")
                result = AttributeResult.inconclusive_result(UNITS[attribute], str(e))
            results[attribute] = result
            return result

        def keep_sweep(matrix: LatencyMatrix) -> None:
            outcome.sweep = matrix

        size_capped = False
        working = self._api_value(element, "size")
        if working is not None:
            amount = self._api_value(element, "amount")
            if amount:
                working = working / amount
        if "size" in bench:
            result = attempt(
                "size", lambda: measure_cache_size(backend, target, self.settings, on_sweep=keep_sweep)
            )
            working = result.value
            size_capped = result.capped
        segment: Optional[AttributeResult] = None
        if nvidia_l2 and bench:
            total = self._api_value(element, "size")
            try:
                segment = measure_cache_size(
                    backend,
                    target,
                    self.settings,
                    cap=int(total) if total else None,
                    on_sweep=keep_sweep,
                )
            except TopoprobeError as e:
                logger.warning(f"L2 segment size is inconclusive: {e!s}")
                segment = AttributeResult.inconclusive_result("B", str(e))
            working = segment.value
        outcome.working_size = int(working) if working else None
        working_size = outcome.working_size

        fg = self._api_value(element, "fetch_granularity")
        if "fetch_granularity" in bench:
            fg = attempt(
                "fetch_granularity",
                lambda: measure_fetch_granularity(backend, target, working_size, self.settings),
            ).value
        outcome.fetch_granularity = int(fg) if fg else None
        fetch_granularity = outcome.fetch_granularity

        if "latency" in bench:

            def latency_probe() -> AttributeResult:
                stats = measure_load_latency(
                    backend, target, fetch_granularity, self.settings, size_bytes=working_size
                )
                return AttributeResult(
                    value=stats.mean,
                    unit="cycles",
                    confidence=min(1.0, stats.count / self.settings.timed_count),
                    stats=stats.to_dict(),
                    detail=f"p50 {stats.p50} cycles over {stats.count} loads",
                )

            attempt("latency", latency_probe)

        def blocked(attribute: str) -> AttributeResult:
            return AttributeResult.inconclusive_result(
                UNITS[attribute],
                "requires a conclusive size and fetch granularity",
                capped=size_capped,
            )

        if "line_size" in bench:
            if working_size and fetch_granularity:
                attempt(
                    "line_size",
                    lambda: measure_cache_line_size(
                        backend, target, working_size, fetch_granularity, self.settings
                    ),
                )
            else:
                results["line_size"] = blocked("line_size")

        if "amount" in bench:
            if nvidia_l2:
                attempt(
                    "amount",
                    lambda: measure_l2_segments(
                        backend, self.api_info, target, self.settings, segment_size=segment
                    ),
                )
            elif working_size:
                stride = fetch_granularity or self.settings.search_stride_bytes
                attempt(
                    "amount",
                    lambda: measure_amount(
                        backend, target, working_size, compute.cores_per_sm, stride, self.settings
                    ),
                )
            else:
                results["amount"] = blocked("amount")

        for attribute, direction in (("read_bw", Direction.READ), ("write_bw", Direction.WRITE)):
            if attribute in bench:
                attempt(
                    attribute,
                    lambda direction=direction: measure_bandwidth(backend, target, direction, compute),
                )
        return outcome

    def _run_sharing(self, outcomes: Dict[str, ElementOutcome]) -> Dict[ResultKey, AttributeResult]:
        results: Dict[ResultKey, AttributeResult] = {}
        wanted = [
            name
            for name, outcome in outcomes.items()
            if self._cells(name).get("shared_with") is CellMethod.BENCHMARK
        ]
        if not wanted:
            return results
        backend = self.backend_factory(self.seed_for("sharing"))

        if self.vendor is Vendor.AMD:
            for name in wanted:
                results[(name, "shared_with")] = self._run_sl1d_sharing(backend, outcomes[name])
            return results

        names = [n for n in SHARING_CANDIDATES[self.vendor] if n in wanted and outcomes[n].target]
        targets = [outcomes[n].target for n in names]
        sizes = {n: outcomes[n].working_size for n in names}
        strides = {n: outcomes[n].fetch_granularity for n in names if outcomes[n].fetch_granularity}
        try:
            sharing = measure_physical_sharing(backend, targets, sizes, strides, self.settings)
        except TopoprobeError as e:
            logger.warning(f"Physical sharing is inconclusive: {e!s}")
            return {
                (n, "shared_with"): AttributeResult.inconclusive_result("elements", str(e))
                for n in wanted
            }

        for name in wanted:
            if not sizes.get(name):
                size_result = outcomes[name].results.get("size")
                results[(name, "shared_with")] = AttributeResult.inconclusive_result(
                    "elements",
                    "requires a conclusive size",
                    capped=bool(size_result and size_result.capped),
                )
                continue
            partners = sharing.shared_with(name)
            skipped = sorted({b if a == name else a for a, b in sharing.unknown_pairs if name in (a, b)})
            detail = f"not compared with {', '.join(skipped)}" if skipped else None
            results[(name, "shared_with")] = AttributeResult(
                value=partners, unit="elements", confidence=1.0, detail=detail
            )
        return results

    def _run_sl1d_sharing(self, backend: MeasurementBackend, outcome: ElementOutcome) -> AttributeResult:
        assert self.api_info is not None
        active = self.api_info.cu_physical_ids
        if not active or outcome.target is None or not outcome.working_size:
            return AttributeResult.inconclusive_result(
                "CU ids", "requires CU ids and a conclusive sL1d size"
            )
        stride = outcome.fetch_granularity or self.settings.search_stride_bytes
        with tqdm(total=len(active), desc="sL1d pairs", disable=not self.show_progress) as bar:
            try:
                sharing = measure_sl1d_sharing(
                    backend,
                    outcome.target,
                    active,
                    outcome.working_size,
                    stride,
                    self.settings,
                    progress=lambda _: bar.update(1),
                )
            except TopoprobeError as e:
                logger.warning(f"sL1d sharing is inconclusive: {e!s}")
                return AttributeResult.inconclusive_result("CU ids", str(e))
        return AttributeResult(
            value=sharing.groups,
            unit="CU ids",
            confidence=1.0,
            detail=f"{len(sharing.groups)} groups, {len(sharing.exclusive)} exclusive CUs",
        )

    def run(self) -> BenchmarkRun:
        """
        Plan and execute all benchmarks

        Returns:
            BenchmarkRun with one result per benchmark cell of the plan
        """
        probe_backend = self.backend_factory(self.seed)
        self.api_info = probe_backend.query_api_info()
        self.capabilities = probe_backend.capabilities()
        catalog = element_catalog(self.vendor)

        if self.only is not None:
            unknown = [name for name in self.only if name not in {e.name for e in catalog}]
            if unknown:
                raise InputError(f"Unknown memory elements for {self.vendor.value}: {unknown}")

        present = present_elements(self.vendor, self.capabilities.spaces, self.capabilities.levels)
        self.plan = plan_benchmarks(self.api_info, self.vendor, present=present, only=self.only)
        planned = {c.element for c in self.plan}
        elements = [e for e in catalog if e.name in planned and e.name in present]
        logger.info(
            f"Benchmarking {len(elements)} elements of {self.api_info.model} "
            f"with {self.workers} worker(s)"
        )

        outcomes: Dict[str, ElementOutcome] = {}
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            mapped = executor.map(self._run_element, elements)
            for element, outcome in tqdm(
                zip(elements, mapped),
                total=len(elements),
                desc="Memory elements",
                disable=not self.show_progress,
            ):
                outcomes[element.name] = outcome

        results: Dict[ResultKey, AttributeResult] = {}
        sweeps: Dict[str, LatencyMatrix] = {}
        for name, outcome in outcomes.items():
            for attribute, result in outcome.results.items():
                results[(name, attribute)] = result
            if outcome.sweep is not None:
                sweeps[name] = outcome.sweep
        results.update(self._run_sharing(outcomes))

        inconclusive = [key for key, r in results.items() if r.inconclusive]
        if inconclusive:
            logger.warning(f"Inconclusive results: {inconclusive}")
        return BenchmarkRun(
            api_info=self.api_info,
            plan=self.plan,
            present=present,
            results=results,
            sweeps=sweeps,
            backend_id=self.capabilities.backend_id,
        )


def run_benchmarks(
    backend_factory: BackendFactory,
    settings: Optional[ProbeSettings] = None,
    seed: int = 0,
    workers: int = 1,
    only: Optional[Sequence[str]] = None,
    show_progress: bool = False,
) -> BenchmarkRun:
    engine = BenchmarkEngine(backend_factory, settings, seed, workers, only, show_progress)
    return engine.run()
