"""Request arrival processes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class WorkloadKind(str, enum.Enum):
    POISSON = "poisson"
    FIXED_BATCH = "fixed_batch"
    TRACE = "trace"


@dataclass
class WorkloadSpec:
    kind: WorkloadKind = WorkloadKind.POISSON
    rate: float = 1.0
    input_tokens: int = 2048
    output_tokens: int = 2048
    count: int = 100
    seed: int = 0
    # (arrival_s, input_tokens, output_tokens), sorted by arrival; trace kind only
    records: list[tuple[float, int, int]] = field(default_factory=list)
    trace_path: Optional[str] = None

    def __post_init__(self) -> None:
        self.kind = WorkloadKind(self.kind)
        if self.kind is WorkloadKind.POISSON and self.rate <= 0:
            raise ValueError("rate must be > 0 for a Poisson workload")
        if self.input_tokens < 1 or self.output_tokens < 1:
            raise ValueError("token counts must be >= 1")
        if self.count < 0:
            raise ValueError("count must be >= 0")

    @property
    def offline(self) -> bool:
        return self.kind is WorkloadKind.FIXED_BATCH


def arrivals(spec: WorkloadSpec) -> list[tuple[float, int, int]]:
    """(arrival, input, output) for every request, in arrival order."""
    if spec.kind is WorkloadKind.TRACE:
        return list(spec.records)
    if spec.kind is WorkloadKind.FIXED_BATCH:
        return [(0.0, spec.input_tokens, spec.output_tokens)] * spec.count
    rng = np.random.default_rng(spec.seed)
    times = np.cumsum(rng.exponential(1.0 / spec.rate, size=spec.count))
    return [(float(t), spec.input_tokens, spec.output_tokens) for t in times]
