"""
Unit tests for report assembly and the emitters
"""

import csv
import json

import numpy as np
import pytest
from jsonschema import Draft202012Validator

from src.device import Vendor
from src.errors import ReportAssemblyError
from src.memsim import device_info
from src.planner import UNITS, CellMethod, plan_benchmarks, present_elements
from src.probes import AttributeResult, Method
from src.report import (
    CellStatus,
    ComputeInfo,
    GeneralInfo,
    MemoryElementReport,
    Provenance,
    ReportCell,
    TopologyReport,
    assemble_report,
    emit_json,
    emit_markdown,
    load_schema,
    parse_report,
    write_raw_csv,
    write_reduced_csv,
    write_sweep_csvs,
)
from src.stats import LatencyMatrix, reduce_geometric

pytestmark = pytest.mark.unit


def fake_results(info, present, only=None):
    """One plausible result per benchmark cell of the plan"""
    results = {}
    for cell in plan_benchmarks(info, present=present, only=only):
        if cell.method is not CellMethod.BENCHMARK:
            continue
        value = [] if cell.attribute == "shared_with" else 64
        results[(cell.element, cell.attribute)] = AttributeResult(
            value=value, unit=UNITS[cell.attribute], confidence=0.99
        )
    return results


@pytest.fixture
def tiny_inputs(tiny_spec):
    info = device_info(tiny_spec)
    present = present_elements(Vendor.NVIDIA, tiny_spec.logical_spaces, tiny_spec.level_names)
    return info, present


def test_assemble_tiny_report(tiny_inputs):
    info, present = tiny_inputs
    results = fake_results(info, present)
    results[("L1", "size")] = AttributeResult(value=8192, confidence=0.999, detail="D=1.0")
    report = assemble_report(info, results, present=present, provenance=Provenance(seed=5))

    assert [row.name for row in report.memory] == [
        "L1",
        "L2",
        "Texture",
        "Readonly",
        "ConstantL1",
        "ConstantL1.5",
        "SharedMemory",
        "DeviceMemory",
    ]
    l1 = report.element("L1")
    assert l1.size.status is CellStatus.MEASURED
    assert l1.size.value == 8192
    assert l1.size.method == "benchmark"
    assert l1.read_bw.status is CellStatus.NOT_APPLICABLE

    memory = report.element("DeviceMemory")
    assert memory.size.value == 1 << 30
    assert memory.size.method == "api"
    assert memory.size.confidence == 1.0
    assert memory.scope == "GPU"

    texture = report.element("Texture")
    assert texture.size.status is CellStatus.NOT_APPLICABLE
    assert texture.size.note == "element not present on this device"
    assert report.element("ConstantL1.5").amount.status is CellStatus.NOT_AVAILABLE
    assert report.provenance.seed == 5
    assert report.general.model == "tiny-test"


def test_json_round_trip(tiny_inputs):
    info, present = tiny_inputs
    report = assemble_report(info, fake_results(info, present), present=present)
    text = emit_json(report)
    assert "null" not in text
    assert parse_report(text) == report
    assert emit_json(parse_report(text)) == text


def test_missing_result(tiny_inputs):
    info, present = tiny_inputs
    results = fake_results(info, present)
    del results[("DeviceMemory", "latency")]
    with pytest.raises(ReportAssemblyError) as excinfo:
        assemble_report(info, results, present=present)
    assert (excinfo.value.element, excinfo.value.attribute) == ("DeviceMemory", "latency")


def test_duplicate_result(tiny_inputs):
    info, present = tiny_inputs
    triples = [(element, attribute, r) for (element, attribute), r in fake_results(info, present).items()]
    triples.append(triples[0])
    with pytest.raises(ReportAssemblyError, match="duplicate"):
        assemble_report(info, triples, present=present)


def test_results_for_non_benchmark_cells(tiny_inputs):
    info, present = tiny_inputs
    results = fake_results(info, present)
    results[("DeviceMemory", "size")] = AttributeResult(value=1, confidence=1.0)
    with pytest.raises(ReportAssemblyError, match="API cell"):
        assemble_report(info, results, present=present)

    results = fake_results(info, present)
    results[("Texture", "size")] = AttributeResult(value=1, confidence=1.0)
    with pytest.raises(ReportAssemblyError, match="not-applicable"):
        assemble_report(info, results, present=present)

    results = fake_results(info, present, only=["L1"])
    results[("DeviceMemory", "latency")] = AttributeResult(value=400.0, confidence=1.0)
    with pytest.raises(ReportAssemblyError, match="not part of the benchmark plan"):
        assemble_report(info, results, present=present, only=["L1"])


def test_inconclusive_cell(tiny_inputs):
    info, present = tiny_inputs
    results = fake_results(info, present)
    results[("L1", "size")] = AttributeResult.inconclusive_result(
        "B", "> 65536 B, no misses within the search cap", capped=True, lower_bound=65536
    )
    report = assemble_report(info, results, present=present)
    cell = report.element("L1").size
    assert cell.status is CellStatus.INCONCLUSIVE
    assert cell.value is None
    assert cell.confidence == 0.0
    assert cell.lower_bound == 65536
    assert "| Size | > 65536 B | 0.000 | benchmark |" in emit_markdown(report)

    document = json.loads(emit_json(report))
    size = next(row for row in document["memory"] if row["name"] == "L1")["size"]
    assert "value" in size
    assert size["value"] is None
    assert size["confidence"] == 0.0
    assert size["note"]
    assert parse_report(emit_json(report)) == report


def test_markdown_sections(tiny_inputs):
    info, present = tiny_inputs
    results = fake_results(info, present)
    results[("L1", "size")] = AttributeResult(value=8192, unit="B", confidence=0.999)
    results[("DeviceMemory", "latency")] = AttributeResult(value=400.5, unit="cycles", confidence=1.0)
    text = emit_markdown(assemble_report(info, results, present=present))
    assert text.startswith("# Memory topology of tiny-test")
    for heading in ("## General", "## Compute", "## Memory elements", "### L1 (SM)", "## Provenance"):
        assert heading in text
    assert "| Size | 8192 B | 0.999 | benchmark |" in text
    assert "| Load latency | 400.5 cycles | 1.000 | benchmark |" in text
    assert "| Size | 1073741824 B | 1.000 | api |" in text
    assert "| Shared with | none | 0.990 | benchmark |" in text
    assert "## CU map" not in text


def test_markdown_cu_map(mi210_profile):
    spec = mi210_profile.spec
    info = device_info(spec)
    present = present_elements(Vendor.AMD, spec.logical_spaces, spec.level_names)
    results = fake_results(info, present, only=["sL1d"])
    groups = [[cu] for cu in info.cu_physical_ids]
    groups[0] = [0, 1]
    del groups[1]
    results[("sL1d", "shared_with")] = AttributeResult(value=groups, unit="CU ids", confidence=1.0)
    report = assemble_report(info, results, present=present, only=["sL1d"])
    assert report.element("sL1d").shared_with.value[0] == [0, 1]
    text = emit_markdown(report)
    assert "## CU map" in text
    assert "| 0 | 0 | 0 |" in text
    assert "| 1 | 1 | 0 |" in text
    assert "| 2 | 2 | 1 |" in text
    assert "| Shared with | 103 groups |" in text


def sample_matrix():
    rng = np.random.default_rng(0)
    sizes = [1024 + 32 * i for i in range(10)]
    return LatencyMatrix(sizes, rng.integers(30, 40, size=(10, 16)))


def test_raw_csv_has_one_line_per_load(tmp_path):
    matrix = sample_matrix()
    path = write_raw_csv(matrix, tmp_path / "raw.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["array_size_bytes", "sample_index", "latency_cycles"]
    assert len(rows) == 1 + len(matrix) * matrix.timed_count


def test_reduced_csv_matches_raw(tmp_path):
    matrix = sample_matrix()
    raw = write_raw_csv(matrix, tmp_path / "raw.csv")
    reduced = write_reduced_csv(matrix, tmp_path / "reduced.csv")

    with open(raw, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    by_size = {}
    for row in rows:
        by_size.setdefault(int(row["array_size_bytes"]), []).append(float(row["latency_cycles"]))
    rebuilt = LatencyMatrix(sorted(by_size), [by_size[s] for s in sorted(by_size)])
    np.testing.assert_array_equal(rebuilt.values, matrix.values)

    with open(reduced, newline="", encoding="utf-8") as f:
        scores = [float(row["score"]) for row in csv.DictReader(f)]
    np.testing.assert_allclose(scores, reduce_geometric(rebuilt).scores, atol=1e-6)


def test_sweep_file_names(tmp_path):
    written = write_sweep_csvs({"ConstantL1.5": sample_matrix(), "L1": sample_matrix()}, tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == [
        "ConstantL1_5_size_raw.csv",
        "ConstantL1_5_size_reduced.csv",
        "L1_size_raw.csv",
        "L1_size_reduced.csv",
    ]
    only_raw = write_sweep_csvs({"L1": sample_matrix()}, tmp_path / "raw", reduced=False)
    assert [p.name for p in only_raw] == ["L1_size_raw.csv"]


def test_schema_matches_models():
    schema = load_schema()
    defs = schema["$defs"]
    assert set(schema["properties"]) == set(TopologyReport.model_fields)
    for name, model in (
        ("GeneralInfo", GeneralInfo),
        ("ComputeInfo", ComputeInfo),
        ("ReportCell", ReportCell),
        ("MemoryElementReport", MemoryElementReport),
        ("Provenance", Provenance),
    ):
        assert set(defs[name]["properties"]) == set(model.model_fields), name
    assert set(defs["ReportCell"]["properties"]["status"]["enum"]) == {s.value for s in CellStatus}
    assert defs["Provenance"]["properties"]["schema_version"]["const"] == Provenance().schema_version


def schema_errors(report):
    validator = Draft202012Validator(load_schema())
    return [error.message for error in validator.iter_errors(json.loads(emit_json(report)))]


def test_emitted_reports_satisfy_the_schema(tiny_inputs, mi210_profile):
    Draft202012Validator.check_schema(load_schema())
    info, present = tiny_inputs
    results = fake_results(info, present)
    assert schema_errors(assemble_report(info, results, present=present)) == []

    results[("L1", "size")] = AttributeResult.inconclusive_result("B", "no change point")
    assert schema_errors(assemble_report(info, results, present=present)) == []

    spec = mi210_profile.spec
    info = device_info(spec)
    present = present_elements(Vendor.AMD, spec.logical_spaces, spec.level_names)
    results = fake_results(info, present, only=["sL1d"])
    results[("sL1d", "shared_with")] = AttributeResult(
        value=[[cu] for cu in info.cu_physical_ids], unit="CU ids", confidence=1.0
    )
    report = assemble_report(info, results, present=present, only=["sL1d"])
    assert schema_errors(report) == []


def test_memory_interface_and_core_count_source(tiny_inputs, h100_profile):
    info = device_info(h100_profile.spec)
    present = present_elements(Vendor.NVIDIA, h100_profile.spec.logical_spaces, h100_profile.spec.level_names)
    report = assemble_report(info, fake_results(info, present, only=["L1"]), present=present, only=["L1"])
    assert report.general.memory_clock_khz == 2619000
    assert report.general.bus_width_bits == 5120
    assert report.compute.cores_per_sm == 128
    assert report.compute.cores_per_sm_method is Method.LOOKUP
    text = emit_markdown(report)
    assert "| Memory clock rate | 2619000 kHz |" in text
    assert "| Memory bus width | 5120 bit |" in text
    assert schema_errors(report) == []

    info, present = tiny_inputs
    tiny = assemble_report(info, fake_results(info, present), present=present)
    assert tiny.general.memory_clock_khz is None
    assert tiny.compute.cores_per_sm_method is Method.API
    assert "Memory clock rate" not in emit_markdown(tiny)
