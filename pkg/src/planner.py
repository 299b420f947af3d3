"""
Memory-element catalog and the benchmark plan derived from the coverage table
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from src.device import ApiInfo, Vendor

logger = logging.getLogger("topoprobe.planner")

# Dependency order: size before fetch granularity, fetch granularity before
# latency and line size, size before amount and sharing
ATTRIBUTES: Tuple[str, ...] = (
    "size",
    "fetch_granularity",
    "latency",
    "line_size",
    "amount",
    "read_bw",
    "write_bw",
    "shared_with",
)

UNITS: Dict[str, str] = {
    "size": "B",
    "fetch_granularity": "B",
    "latency": "cycles",
    "line_size": "B",
    "amount": "count",
    "read_bw": "GiB/s",
    "write_bw": "GiB/s",
    "shared_with": "elements",
}


class CellMethod(str, Enum):
    API = "api"
    BENCHMARK = "benchmark"
    NOT_APPLICABLE = "not-applicable"
    NOT_AVAILABLE = "not-available"


@dataclass(frozen=True)
class ElementInfo:
    """
    How a memory element is reached

    ``level`` names the device level that marks the element as present; elements
    without one (texture, readonly) are present when their logical space is.
    ``miss_chain`` lists elements whose latency serves as the miss reference,
    first present one wins.
    """

    name: str
    space: str
    bypass: Tuple[str, ...] = ()
    level: Optional[str] = None
    miss_chain: Tuple[str, ...] = ()
    is_cache: bool = True
    scope: str = "SM"

    def bypass_for(self, levels: Iterable[str]) -> FrozenSet[str]:
        present = set(levels)
        return frozenset(name for name in self.bypass if name in present)

    def is_present(self, spaces: Iterable[str], levels: Iterable[str]) -> bool:
        if self.space not in set(spaces):
            return False
        return self.level is None or self.level in set(levels)


@dataclass(frozen=True)
class PlannedCell:
    element: str
    attribute: str
    method: CellMethod


NVIDIA_ELEMENTS: Tuple[ElementInfo, ...] = (
    ElementInfo("L1", "global", level="L1", miss_chain=("L2", "DeviceMemory")),
    ElementInfo("L2", "global", bypass=("L1",), level="L2", miss_chain=("DeviceMemory",), scope="GPU"),
    ElementInfo("Texture", "texture", miss_chain=("L2", "DeviceMemory")),
    ElementInfo("Readonly", "readonly", miss_chain=("L2", "DeviceMemory")),
    ElementInfo(
        "ConstantL1", "constant", level="ConstantL1", miss_chain=("ConstantL1.5", "L2", "DeviceMemory")
    ),
    ElementInfo(
        "ConstantL1.5",
        "constant",
        bypass=("ConstantL1",),
        level="ConstantL1.5",
        miss_chain=("ConstantL2", "DeviceMemory"),
    ),
    ElementInfo("SharedMemory", "shared", level="SharedMemory", is_cache=False),
    ElementInfo(
        "DeviceMemory",
        "global",
        bypass=("L1", "L2"),
        level="DeviceMemory",
        is_cache=False,
        scope="GPU",
    ),
)

AMD_ELEMENTS: Tuple[ElementInfo, ...] = (
    ElementInfo("vL1", "global", level="vL1", miss_chain=("L2", "L3", "DeviceMemory"), scope="CU"),
    ElementInfo(
        "sL1d", "scalar", level="sL1d", miss_chain=("ScalarL2", "DeviceMemory"), scope="CU group"
    ),
    ElementInfo(
        "L2", "global", bypass=("vL1",), level="L2", miss_chain=("L3", "DeviceMemory"), scope="GPU"
    ),
    ElementInfo(
        "L3", "global", bypass=("vL1", "L2"), level="L3", miss_chain=("DeviceMemory",), scope="GPU"
    ),
    ElementInfo("LDS", "lds", level="LDS", is_cache=False, scope="CU"),
    ElementInfo(
        "DeviceMemory",
        "global",
        bypass=("vL1", "L2", "L3"),
        level="DeviceMemory",
        is_cache=False,
        scope="GPU",
    ),
)

# Reference probes that are not report rows: L2 reached from the constant or
# scalar path, used as the miss reference of the upper constant/scalar caches
REFERENCE_ELEMENTS: Dict[Vendor, Tuple[ElementInfo, ...]] = {
    Vendor.NVIDIA: (
        ElementInfo(
            "ConstantL2", "constant", bypass=("ConstantL1", "ConstantL1.5"), level="L2", scope="GPU"
        ),
    ),
    Vendor.AMD: (ElementInfo("ScalarL2", "scalar", bypass=("sL1d",), level="L2", scope="GPU"),),
}

B = CellMethod.BENCHMARK
A = CellMethod.API
N = CellMethod.NOT_APPLICABLE
X = CellMethod.NOT_AVAILABLE


def _row(size, fg, latency, line, amount, bw, shared) -> Dict[str, CellMethod]:
    return {
        "size": size,
        "fetch_granularity": fg,
        "latency": latency,
        "line_size": line,
        "amount": amount,
        "read_bw": bw,
        "write_bw": bw,
        "shared_with": shared,
    }


# Coverage table: bandwidth is only benchmarked on higher-level caches and
# device memory, the remaining bandwidth cells are not applicable
CELL_MAP: Dict[Vendor, Dict[str, Dict[str, CellMethod]]] = {
    Vendor.NVIDIA: {
        "L1": _row(B, B, B, B, B, N, B),
        "L2": _row(A, B, B, B, B, B, N),
        "Texture": _row(B, B, B, B, B, N, B),
        "Readonly": _row(B, B, B, B, B, N, B),
        "ConstantL1": _row(B, B, B, B, B, N, B),
        "ConstantL1.5": _row(B, B, B, B, X, N, N),
        "SharedMemory": _row(A, N, B, N, N, N, N),
        "DeviceMemory": _row(A, N, B, N, N, B, N),
    },
    Vendor.AMD: {
        "vL1": _row(B, B, B, B, B, N, N),
        "sL1d": _row(B, B, B, B, N, N, B),
        "L2": _row(A, B, B, A, A, B, N),
        "L3": _row(A, X, X, A, A, B, N),
        "LDS": _row(A, N, B, N, N, N, N),
        "DeviceMemory": _row(A, N, B, N, N, B, N),
    },
}

# Elements whose logical spaces are compared for physical sharing
SHARING_CANDIDATES: Dict[Vendor, Tuple[str, ...]] = {
    Vendor.NVIDIA: ("L1", "Texture", "Readonly", "ConstantL1"),
    Vendor.AMD: (),
}


def element_catalog(vendor: Vendor) -> Tuple[ElementInfo, ...]:
    return NVIDIA_ELEMENTS if Vendor(vendor) is Vendor.NVIDIA else AMD_ELEMENTS


def find_element(vendor: Vendor, name: str) -> ElementInfo:
    for element in element_catalog(vendor) + REFERENCE_ELEMENTS[Vendor(vendor)]:
        if element.name == name:
            return element
    raise KeyError(name)


def present_elements(vendor: Vendor, spaces: Iterable[str], levels: Iterable[str]) -> List[str]:
    spaces = list(spaces)
    levels = list(levels)
    return [e.name for e in element_catalog(vendor) if e.is_present(spaces, levels)]


def miss_reference(
    vendor: Vendor, element: ElementInfo, spaces: Iterable[str], levels: Iterable[str]
) -> Optional[ElementInfo]:
    """First element of the miss chain that the device has"""
    spaces = list(spaces)
    levels = list(levels)
    for name in element.miss_chain:
        candidate = find_element(vendor, name)
        if candidate.is_present(spaces, levels):
            return candidate
    return None


def plan_benchmarks(
    api_info: ApiInfo,
    vendor: Optional[Vendor] = None,
    present: Optional[Sequence[str]] = None,
    only: Optional[Sequence[str]] = None,
) -> List[PlannedCell]:
    """
    Full element x attribute matrix of the coverage table for one vendor

    Cells the API answers are planned as api, table cells marked API but not
    answered become not-available, and every cell of an element missing from
    the device is not-applicable (not-available cells stay as they are).
    """
    vendor = Vendor(vendor or api_info.vendor)
    cells = CELL_MAP[vendor]
    planned = []
    for element in element_catalog(vendor):
        if only is not None and element.name not in only:
            continue
        is_present = present is None or element.name in present
        for attribute in ATTRIBUTES:
            kind = cells[element.name][attribute]
            if kind is X:
                method = X
            elif not is_present or kind is N:
                method = N
            elif element.level is not None and api_info.has(element.level, attribute):
                method = A
            elif kind is A:
                method = X
            else:
                method = B
            planned.append(PlannedCell(element.name, attribute, method))
    logger.debug(
        f"Planned {sum(c.method is B for c in planned)} benchmark and "
        f"{sum(c.method is A for c in planned)} API cells for {vendor.value}"
    )
    return planned
