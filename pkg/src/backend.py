"""
Measurement backend contract and its simulator implementation
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import FrozenSet, List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.device import ApiInfo, DeviceSpec
from src.errors import InputError
from src.memsim import Actor, Direction, create_session, device_info

logger = logging.getLogger("topoprobe.backend")

DEFAULT_TIMED_COUNT = 512
MIN_STRIDE = 4


class PChasePlan(BaseModel):
    """One pointer-chase phase"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: str
    array_bytes: int
    stride_bytes: int
    timed_count: int = DEFAULT_TIMED_COUNT
    warmup: bool = True
    bypass: FrozenSet[str] = frozenset()
    actor: Actor = Actor()
    base_address: int = 0

    @model_validator(mode="after")
    def _check_geometry(self) -> "PChasePlan":
        if self.stride_bytes < MIN_STRIDE:
            raise ValueError(f"stride must be at least {MIN_STRIDE} bytes")
        if self.array_bytes < self.stride_bytes:
            raise ValueError("array must hold at least one stride")
        if self.timed_count < 0:
            raise ValueError("timed_count must be non-negative")
        if self.base_address < 0:
            raise ValueError("base_address must be non-negative")
        return self

    @property
    def chain_length(self) -> int:
        return self.array_bytes // self.stride_bytes


class StreamPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    space: str
    direction: Direction
    threads_per_block: int
    num_blocks: int
    bytes_total: int
    bypass: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class Trace:
    latencies: np.ndarray
    plan: PChasePlan

    def __len__(self) -> int:
        return int(self.latencies.size)


@dataclass(frozen=True)
class BackendCapabilities:
    spaces: FrozenSet[str]
    # Memory elements the device reports, without their space mapping
    levels: FrozenSet[str]
    paired_actors: bool
    backend_id: str


class MeasurementBackend(ABC):
    """Executes measurement plans; the probes only talk to this interface"""

    @abstractmethod
    def capabilities(self) -> BackendCapabilities:
        ...

    @abstractmethod
    def run_pchase(self, plan: PChasePlan) -> Trace:
        """Warm-up (optional) and timed pass on a cold device"""

    @abstractmethod
    def run_paired_phase_sequence(self, plans: Sequence[PChasePlan]) -> List[Trace]:
        """Run phases back to back on one cold device, in order"""

    @abstractmethod
    def query_api_info(self) -> ApiInfo:
        ...

    @abstractmethod
    def run_stream(self, plan: StreamPlan) -> float:
        """Achieved bandwidth in GiB/s"""


class SimulatorBackend(MeasurementBackend):
    """Backend running every plan on a simulator session"""

    backend_id = "memsim"

    def __init__(self, spec: DeviceSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self.session = create_session(spec, seed)

    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            spaces=frozenset(self.spec.logical_spaces),
            levels=frozenset(self.spec.level_names),
            paired_actors=True,
            backend_id=self.backend_id,
        )

    def _run_phase(self, plan: PChasePlan) -> Trace:
        latencies = self.session.run_chase(
            plan.space,
            base=plan.base_address,
            array_bytes=plan.array_bytes,
            stride=plan.stride_bytes,
            timed_count=plan.timed_count,
            warmup=plan.warmup,
            actor=plan.actor,
            bypass=plan.bypass,
        )
        return Trace(latencies=latencies, plan=plan)

    def run_pchase(self, plan: PChasePlan) -> Trace:
        if plan.timed_count < 1:
            raise InputError("A p-chase needs at least one timed load")
        self.session.reset()
        return self._run_phase(plan)

    def run_paired_phase_sequence(self, plans: Sequence[PChasePlan]) -> List[Trace]:
        if not plans:
            raise InputError("Phase sequence must not be empty")
        self.session.reset()
        return [self._run_phase(plan) for plan in plans]

    def query_api_info(self) -> ApiInfo:
        return device_info(self.spec)

    def run_stream(self, plan: StreamPlan) -> float:
        return self.session.bandwidth(
            plan.space,
            plan.direction,
            threads_per_block=plan.threads_per_block,
            num_blocks=plan.num_blocks,
            bytes_total=plan.bytes_total,
            bypass=plan.bypass,
        )
