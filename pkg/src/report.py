"""
Topology report: data model, assembly from benchmark results and emitters
"""

import csv
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, SerializerFunctionWrapHandler, model_serializer

from src import __version__
from src.device import ApiInfo, Vendor
from src.errors import ReportAssemblyError
from src.planner import ATTRIBUTES, UNITS, CellMethod, element_catalog, plan_benchmarks
from src.probes import AttributeResult, AttributeValue, Method
from src.stats import DEFAULT_ALPHA_GRID, LatencyMatrix, reduce_geometric

logger = logging.getLogger("topoprobe.report")

SCHEMA_VERSION = "1.0"
SCHEMA_PATH = Path(__file__).parent / "data" / "topology_report.schema.json"

ResultKey = Tuple[str, str]


class CellStatus(str, Enum):
    MEASURED = "measured"
    INCONCLUSIVE = "inconclusive"
    NOT_APPLICABLE = "not-applicable"
    NOT_AVAILABLE = "not-available"


class ReportCell(BaseModel):
    model_config = ConfigDict(extra="forbid")

    status: CellStatus
    value: Optional[AttributeValue] = None
    unit: Optional[str] = None
    confidence: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    method: Optional[str] = None
    note: Optional[str] = None
    lower_bound: Optional[int] = None
    stats: Optional[Dict[str, Union[int, float]]] = None

    @property
    def is_value(self) -> bool:
        return self.status is CellStatus.MEASURED

    @model_serializer(mode="wrap")
    def _keep_inconclusive_value(self, handler: SerializerFunctionWrapHandler) -> Dict[str, Any]:
        data = handler(self)
        # Inconclusive cells always carry an explicit null value
        if self.status is CellStatus.INCONCLUSIVE and "value" not in data:
            data["value"] = None
        return data


class MemoryElementReport(BaseModel):
    """One row of the coverage table"""

    model_config = ConfigDict(extra="forbid")

    name: str
    scope: str
    size: ReportCell
    latency: ReportCell
    read_bw: ReportCell
    write_bw: ReportCell
    line_size: ReportCell
    fetch_granularity: ReportCell
    amount: ReportCell
    shared_with: ReportCell

    def cell(self, attribute: str) -> ReportCell:
        return getattr(self, attribute)


class GeneralInfo(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vendor: Vendor
    model: str
    clock_rate_khz: int
    compute_capability: Optional[str] = None
    memory_clock_khz: Optional[int] = None
    bus_width_bits: Optional[int] = None


class ComputeInfo(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_sm: int
    cores_per_sm: int
    max_blocks_per_sm: int
    max_threads_per_block: int
    max_threads_per_sm: int
    warp_size: int
    registers_per_block: int
    registers_per_sm: int
    cores_per_sm_method: Method = Method.API
    cu_physical_ids: Optional[List[int]] = None


class Provenance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tool_version: str = __version__
    schema_version: str = SCHEMA_VERSION
    seed: int = 0
    backend_id: str = "memsim"
    timestamp: Optional[str] = None
    alpha_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))


class TopologyReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    general: GeneralInfo
    compute: ComputeInfo
    memory: List[MemoryElementReport]
    provenance: Provenance

    def element(self, name: str) -> MemoryElementReport:
        for row in self.memory:
            if row.name == name:
                return row
        raise KeyError(name)


def _normalize_results(
    results: Union[Mapping[ResultKey, AttributeResult], Iterable[Tuple[str, str, AttributeResult]]],
) -> Dict[ResultKey, AttributeResult]:
    if isinstance(results, Mapping):
        return dict(results)
    normalized: Dict[ResultKey, AttributeResult] = {}
    for element, attribute, result in results:
        if (element, attribute) in normalized:
            raise ReportAssemblyError(element, attribute, "duplicate result")
        normalized[(element, attribute)] = result
    return normalized


def _measured_cell(result: AttributeResult) -> ReportCell:
    if result.inconclusive:
        return ReportCell(
            status=CellStatus.INCONCLUSIVE,
            unit=result.unit,
            confidence=0.0,
            method=result.method.value,
            note=result.detail or "inconclusive",
            lower_bound=result.lower_bound,
        )
    return ReportCell(
        status=CellStatus.MEASURED,
        value=result.value,
        unit=result.unit,
        confidence=result.confidence,
        method=result.method.value,
        note=result.detail,
        stats=result.stats,
    )


def assemble_report(
    api_info: ApiInfo,
    results: Union[Mapping[ResultKey, AttributeResult], Iterable[Tuple[str, str, AttributeResult]]],
    present: Optional[Sequence[str]] = None,
    only: Optional[Sequence[str]] = None,
    provenance: Optional[Provenance] = None,
) -> TopologyReport:
    """
    Merge API values and benchmark results into the report

    Every benchmark cell of the plan needs exactly one result; API and marker
    cells must not receive one.

    Raises:
        ReportAssemblyError: duplicate, missing or misplaced results
    """
    supplied = _normalize_results(results)
    plan = plan_benchmarks(api_info, api_info.vendor, present=present, only=only)
    planned = {(c.element, c.attribute): c.method for c in plan}
    for element, attribute in supplied:
        if (element, attribute) not in planned:
            raise ReportAssemblyError(element, attribute, "cell is not part of the benchmark plan")

    catalog = {e.name: e for e in element_catalog(api_info.vendor)}
    rows: List[MemoryElementReport] = []
    for name in dict.fromkeys(c.element for c in plan):
        element = catalog[name]
        is_present = present is None or name in present
        cells: Dict[str, ReportCell] = {}
        for attribute in ATTRIBUTES:
            method = planned[(name, attribute)]
            result = supplied.get((name, attribute))
            if method is CellMethod.BENCHMARK:
                if result is None:
                    raise ReportAssemblyError(name, attribute, "missing benchmark result")
                cells[attribute] = _measured_cell(result)
            elif method is CellMethod.API:
                if result is not None:
                    raise ReportAssemblyError(name, attribute, "result supplied for an API cell")
                cells[attribute] = ReportCell(
                    status=CellStatus.MEASURED,
                    value=api_info.value(element.level or name, attribute),
                    unit=UNITS[attribute],
                    confidence=1.0,
                    method="api",
                )
            else:
                if result is not None:
                    raise ReportAssemblyError(name, attribute, f"value supplied for a {method.value} cell")
                note = None if is_present else "element not present on this device"
                cells[attribute] = ReportCell(status=CellStatus(method.value), note=note)
        rows.append(MemoryElementReport(name=name, scope=element.scope, **cells))

    compute = ComputeInfo(
        **api_info.compute.model_dump(),
        cores_per_sm_method=Method.LOOKUP if api_info.cores_per_sm_from_lookup else Method.API,
        cu_physical_ids=api_info.cu_physical_ids,
    )
    return TopologyReport(
        general=GeneralInfo(
            vendor=api_info.vendor,
            model=api_info.model,
            clock_rate_khz=api_info.clock_rate_khz,
            compute_capability=api_info.compute_capability,
            memory_clock_khz=api_info.memory_clock_khz,
            bus_width_bits=api_info.bus_width_bits,
        ),
        compute=compute,
        memory=rows,
        provenance=provenance or Provenance(),
    )


def emit_json(report: TopologyReport) -> str:
    return report.model_dump_json(indent=2, exclude_none=True)


def parse_report(text: str) -> TopologyReport:
    return TopologyReport.model_validate_json(text)


def load_schema() -> dict:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        return json.load(f)


def _format_value(cell: ReportCell) -> str:
    if cell.status is CellStatus.INCONCLUSIVE:
        if cell.lower_bound is not None:
            return f"> {cell.lower_bound} {cell.unit or ''}".rstrip()
        return "inconclusive"
    if cell.status is not CellStatus.MEASURED:
        return cell.status.value
    value = cell.value
    if isinstance(value, float):
        text = f"{value:.1f}"
    elif isinstance(value, list):
        if value and isinstance(value[0], list):
            text = f"{len(value)} groups"
        else:
            text = ", ".join(str(v) for v in value) or "none"
        return text
    else:
        text = str(value)
    return f"{text} {cell.unit}" if cell.unit and cell.unit != "elements" else text


LABELS = {
    "size": "Size",
    "latency": "Load latency",
    "read_bw": "Read bandwidth",
    "write_bw": "Write bandwidth",
    "line_size": "Cache line size",
    "fetch_granularity": "Fetch granularity",
    "amount": "Amount",
    "shared_with": "Shared with",
}


def emit_markdown(report: TopologyReport) -> str:
    """Human-readable rendering of the report"""
    general = report.general
    lines = [f"# Memory topology of {general.model}", "", "## General", ""]
    lines += ["| Field | Value |", "| --- | --- |"]
    lines.append(f"| Vendor | {general.vendor.value} |")
    lines.append(f"| Model | {general.model} |")
    lines.append(f"| Clock rate | {general.clock_rate_khz} kHz |")
    if general.compute_capability:
        lines.append(f"| Compute capability | {general.compute_capability} |")
    if general.memory_clock_khz:
        lines.append(f"| Memory clock rate | {general.memory_clock_khz} kHz |")
    if general.bus_width_bits:
        lines.append(f"| Memory bus width | {general.bus_width_bits} bit |")

    lines += ["", "## Compute", "", "| Field | Value |", "| --- | --- |"]
    for name, value in report.compute.model_dump(mode="json", exclude={"cu_physical_ids"}).items():
        lines.append(f"| {name} | {value} |")
    if report.compute.cu_physical_ids is not None:
        lines.append(f"| active CUs | {len(report.compute.cu_physical_ids)} |")

    lines += ["", "## Memory elements"]
    for row in report.memory:
        lines += ["", f"### {row.name} ({row.scope})", ""]
        lines += ["| Attribute | Value | Confidence | Source |", "| --- | --- | --- | --- |"]
        for attribute in ATTRIBUTES:
            cell = row.cell(attribute)
            if cell.status is CellStatus.NOT_APPLICABLE:
                continue
            confidence = f"{cell.confidence:.3f}" if cell.confidence is not None else ""
            source = cell.method or ""
            lines.append(f"| {LABELS[attribute]} | {_format_value(cell)} | {confidence} | {source} |")

    if report.compute.cu_physical_ids is not None:
        lines += ["", "## CU map", "", "| Logical CU | Physical CU | sL1d group |", "| --- | --- | --- |"]
        group_of: Dict[int, int] = {}
        for row in report.memory:
            cell = row.shared_with
            if cell.is_value and cell.value and isinstance(cell.value[0], list):
                for index, group in enumerate(cell.value):
                    group_of.update({cu: index for cu in group})
        for logical, physical in enumerate(report.compute.cu_physical_ids):
            group = group_of.get(physical)
            lines.append(f"| {logical} | {physical} | {'' if group is None else group} |")

    provenance = report.provenance
    lines += ["", "## Provenance", ""]
    lines.append(
        f"topoprobe {provenance.tool_version}, schema {provenance.schema_version}, "
        f"backend {provenance.backend_id}, seed {provenance.seed}"
    )
    if provenance.timestamp:
        lines.append(f"generated {provenance.timestamp}")
    return "\n".join(lines) + "\n"


def write_raw_csv(matrix: LatencyMatrix, path: Union[str, Path]) -> Path:
    """One line per timed load of every sweep row"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["array_size_bytes", "sample_index", "latency_cycles"])
        for size, row in matrix.rows():
            for index, latency in enumerate(row):
                writer.writerow([size, index, int(latency)])
    return path


def write_reduced_csv(matrix: LatencyMatrix, path: Union[str, Path]) -> Path:
    path = Path(path)
    series = reduce_geometric(matrix)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["array_size_bytes", "score"])
        for size, score in series.points():
            writer.writerow([size, f"{score:.6f}"])
    return path


def _file_stem(element: str) -> str:
    return element.replace(".", "_")


def write_sweep_csvs(
    sweeps: Mapping[str, LatencyMatrix],
    out_dir: Union[str, Path],
    raw: bool = True,
    reduced: bool = True,
) -> List[Path]:
    """Write ``<element>_size_raw.csv`` and ``<element>_size_reduced.csv`` per sweep"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for element, matrix in sweeps.items():
        stem = _file_stem(element)
        if raw:
            written.append(write_raw_csv(matrix, out_dir / f"{stem}_size_raw.csv"))
        if reduced:
            written.append(write_reduced_csv(matrix, out_dir / f"{stem}_size_reduced.csv"))
    logger.info(f"Wrote {len(written)} sweep files to {out_dir}")
    return written
