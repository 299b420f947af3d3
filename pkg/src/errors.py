"""
Exception hierarchy shared by every topoprobe component
"""

from typing import List, Optional, Tuple


class TopoprobeError(Exception):
    """Base class for all topoprobe failures"""


class InputError(TopoprobeError, ValueError):
    """Invalid argument to a pure function or simulator call"""


class UnknownLevelError(InputError):
    """A level name that the device does not declare"""

    def __init__(self, level: str):
        super().__init__(f"Unknown memory level: {level}")
        self.level = level


class SpecValidationError(TopoprobeError):
    """
    A device spec failed parsing or invariant validation

    Each entry of ``problems`` starts with the offending field path.
    """

    def __init__(self, problems: List[str], source: Optional[str] = None):
        self.problems = list(problems)
        self.source = source
        prefix = f"Invalid device spec {source}" if source else "Invalid device spec"
        super().__init__(f"{prefix}: " + "; ".join(self.problems))


class UnsupportedMeasurementError(TopoprobeError):
    """The backend cannot run the requested measurement"""


class UnboundedSearchError(TopoprobeError):
    """Interval search saw no misses up to its cap"""

    def __init__(self, scanned: Tuple[int, int], message: Optional[str] = None):
        lo, hi = scanned
        super().__init__(message or f"No misses observed between {lo} and {hi} bytes")
        self.scanned = scanned


class InconclusiveMeasurement(TopoprobeError):
    """A probe ran but could not settle on a value"""


class ReportAssemblyError(TopoprobeError):
    """The collected results do not form a complete report"""

    def __init__(self, element: str, attribute: str, reason: str):
        super().__init__(f"Cell ({element}, {attribute}): {reason}")
        self.element = element
        self.attribute = attribute


class ConfigError(TopoprobeError):
    """Invalid run configuration"""
