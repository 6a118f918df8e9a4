"""Host-memory KV buffer with an SLO-driven logical size.

The physical buffer has a fixed capacity; only ``logical`` chunks of it may be
filled at a time. TPOT trouble halves the logical size (fewer prefills can
park their KV on the host), TTFT trouble doubles it. Shrinking never evicts:
if usage is above the new logical size, new offloads simply wait.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional


class Residency(str, enum.Enum):
    GPU = "gpu"
    CPU = "cpu"


class BufferError(RuntimeError):
    pass


@dataclass
class LogicalBuffer:
    capacity: int
    logical: int = 1
    alpha: float = 2.0
    used: int = 0
    entries: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 1 <= self.logical <= self.capacity:
            raise ValueError("logical size must lie in [1, capacity]")
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")

    @property
    def available(self) -> int:
        """Chunks that may still be offloaded under the current logical size."""
        return max(0, self.logical - self.used)

    def offload(self, request, kv_chunks: int) -> None:
        if kv_chunks < 0:
            raise ValueError("kv_chunks must be >= 0")
        if request.id in self.entries:
            raise BufferError(f"request {request.id} is already offloaded")
        if kv_chunks > self.available:
            raise BufferError(f"offload of {kv_chunks} chunks exceeds logical space {self.available}")
        self.entries[request.id] = kv_chunks
        self.used += kv_chunks
        request.kv_residency = Residency.CPU

    def fetch(self, request, reserved_chunks: int, chunk_bytes: int) -> int:
        """Bring a request's KV back to the GPU; returns bytes to transfer.

        ``reserved_chunks`` is the GPU space the caller already set aside.
        """
        if request.id not in self.entries:
            raise BufferError(f"request {request.id} is not offloaded")
        chunks = self.entries[request.id]
        if reserved_chunks < chunks:
            raise BufferError(f"fetch of {chunks} chunks with only {reserved_chunks} reserved on GPU")
        del self.entries[request.id]
        self.used -= chunks
        request.kv_residency = Residency.GPU
        return chunks * chunk_bytes

    def scale(self, ttft_violation: bool, tpot_violation: bool) -> int:
        """Resize the logical buffer. A TPOT violation wins over a TTFT one."""
        if tpot_violation:
            self.logical = max(int(self.logical // self.alpha), 1)
        elif ttft_violation:
            self.logical = min(int(self.logical * self.alpha), self.capacity)
        return self.logical


@dataclass
class ViolationDetector:
    slo_ttft: float
    slo_tpot: float
    window: int = 5
    threshold: int = 3
    _recent: deque = field(default_factory=deque, repr=False)

    def __post_init__(self) -> None:
        if not self.window >= self.threshold >= 1:
            raise ValueError("need window >= threshold >= 1")
        self._recent = deque(maxlen=self.window)

    def record_iteration(self, ttfts: Iterable[float], tpots: Iterable[float]) -> tuple[bool, bool]:
        """Add one iteration's samples; returns (TTFT event, TPOT event)."""
        self._recent.append((sum(1 for x in ttfts if x > self.slo_ttft),
                             sum(1 for x in tpots if x > self.slo_tpot)))
        ttft_hits = sum(a for a, _ in self._recent)
        tpot_hits = sum(b for _, b in self._recent)
        return ttft_hits >= self.threshold, tpot_hits >= self.threshold


@dataclass
class BufferConfig:
    capacity_chunks: int = 65536
    alpha: float = 2.0
    window: int = 5
    threshold: int = 3
    initial_logical: int = 1
    # None: derive from the SLO multiplier and an unloaded calibration run
    slo_ttft: Optional[float] = None
    slo_tpot: Optional[float] = None

    def __post_init__(self) -> None:
        if self.capacity_chunks < 1:
            raise ValueError("capacity_chunks must be >= 1")
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")
        if not self.window >= self.threshold >= 1:
            raise ValueError("need window >= threshold >= 1")
        if not 1 <= self.initial_logical <= self.capacity_chunks:
            raise ValueError("initial_logical must lie in [1, capacity_chunks]")
        for name in ("slo_ttft", "slo_tpot"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be > 0")
