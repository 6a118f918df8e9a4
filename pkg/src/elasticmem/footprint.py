"""Byte and latency cost model for transformer serving.

Every other module prices memory and time through these functions, so they
stay pure: no state, no I/O, plain ints for bytes and floats for seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

MiB = 1 << 20
GiB = 1 << 30


class ModelDoesNotFit(ValueError):
    """Raised when the weights alone exceed device memory."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_layers: int
    hidden: int
    n_heads: int
    n_kv_heads: int
    head_dim: int
    n_params: int
    dtype_bytes: int = 2
    max_context: int = 4096
    # per-token activation bytes = act_coeff * hidden * dtype_bytes
    act_coeff: float = 24.0

    def __post_init__(self) -> None:
        for field in ("n_layers", "hidden", "n_heads", "n_kv_heads", "head_dim", "dtype_bytes", "max_context"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be > 0")
        if self.n_params < 0:
            raise ValueError("n_params must be >= 0")
        if self.n_kv_heads > self.n_heads:
            raise ValueError("n_kv_heads must not exceed n_heads")
        if self.act_coeff <= 0:
            raise ValueError("act_coeff must be > 0")


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    hbm_bytes: int
    mem_bw: float
    compute_rate: float
    xfer_bw: float = 25e9
    chunk_bytes: int = 2 * MiB
    map_cost: float = 5e-6
    unmap_cost: float = 10e-6
    premap_budget_bytes: int = 50 * MiB

    def __post_init__(self) -> None:
        for field in ("hbm_bytes", "mem_bw", "compute_rate", "xfer_bw", "chunk_bytes",
                      "map_cost", "unmap_cost", "premap_budget_bytes"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be > 0")
        if self.chunk_bytes & (self.chunk_bytes - 1):
            raise ValueError("chunk_bytes must be a power of two")

    @property
    def total_chunks(self) -> int:
        return self.hbm_bytes // self.chunk_bytes


# Llama3-8B with a 262K context window. act_coeff=16 puts the activation share
# of an 80 GiB card near 0.3% at 2K context and near 31% at 200K.
LLAMA3_8B_262K = ModelSpec(
    name="llama3-8b-262k",
    n_layers=32,
    hidden=4096,
    n_heads=32,
    n_kv_heads=8,
    head_dim=128,
    n_params=8_030_000_000,
    dtype_bytes=2,
    max_context=262_144,
    act_coeff=16.0,
)

A100_80GB = DeviceSpec(
    name="a100-80gb",
    hbm_bytes=80 * GiB,
    mem_bw=2.0e12,
    compute_rate=2.0e14,
)

MODELS = {LLAMA3_8B_262K.name: LLAMA3_8B_262K}
DEVICES = {A100_80GB.name: A100_80GB}


def kv_bytes_per_token(m: ModelSpec) -> int:
    """Key plus value bytes one token occupies across all layers."""
    return 2 * m.n_layers * m.n_kv_heads * m.head_dim * m.dtype_bytes


def activation_bytes(m: ModelSpec, n_tokens: int) -> int:
    if n_tokens < 0:
        raise ValueError("n_tokens must be >= 0")
    return int(n_tokens * m.act_coeff * m.hidden * m.dtype_bytes)


def weights_bytes(m: ModelSpec) -> int:
    return m.n_params * m.dtype_bytes


def bytes_to_chunks(n_bytes: int, chunk_bytes: int) -> int:
    return -(-n_bytes // chunk_bytes)


def kv_chunks(m: ModelSpec, d: DeviceSpec, n_tokens: int) -> int:
    """Chunks needed to hold the KV cache of ``n_tokens`` tokens."""
    return bytes_to_chunks(n_tokens * kv_bytes_per_token(m), d.chunk_bytes)


def activation_chunks(m: ModelSpec, d: DeviceSpec, n_tokens: int) -> int:
    return bytes_to_chunks(activation_bytes(m, n_tokens), d.chunk_bytes)


class Composition(NamedTuple):
    weights: float
    activation: float
    kv: float


def composition_report(m: ModelSpec, d: DeviceSpec, context: int, concurrency: int) -> Composition:
    """Shares of device memory taken by weights, activations and KV cache.

    Activations are sized for ``concurrency`` simultaneous prefills of
    ``context`` tokens; the KV cache gets whatever is left.
    """
    w = weights_bytes(m)
    if w >= d.hbm_bytes:
        raise ModelDoesNotFit(f"{m.name}: weights need {w} B, device has {d.hbm_bytes} B")
    act = min(activation_bytes(m, context * concurrency), d.hbm_bytes - w)
    kv = d.hbm_bytes - w - act
    total = d.hbm_bytes
    return Composition(w / total, act / total, kv / total)


def prefill_coefficients(m: ModelSpec, d: DeviceSpec) -> tuple[float, float]:
    """Return (a, b) of the prefill polynomial a*n**2 + b*n.

    ``a`` is causal self-attention (QK^T and AV, half the score matrix);
    ``b`` is the dense 2*params flops per token.
    """
    a = 2.0 * m.n_layers * m.n_heads * m.head_dim / d.compute_rate
    b = 2.0 * m.n_params / d.compute_rate
    return a, b


def prefill_latency(m: ModelSpec, d: DeviceSpec, n_tokens: int) -> float:
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    a, b = prefill_coefficients(m, d)
    return a * n_tokens * n_tokens + b * n_tokens


def decode_token_overhead(m: ModelSpec, d: DeviceSpec) -> float:
    """Compute time per generated token, charged once per sequence in a step."""
    return 2.0 * m.n_params / d.compute_rate


def decode_step_latency(m: ModelSpec, d: DeviceSpec, batch: int, resident_kv_bytes: int) -> float:
    """One decode iteration: stream weights and resident KV once, plus per-token compute."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return (weights_bytes(m) + resident_kv_bytes) / d.mem_bw + decode_token_overhead(m, d) * batch


def transfer_time(d: DeviceSpec, n_bytes: int) -> float:
    if n_bytes < 0:
        raise ValueError("n_bytes must be >= 0")
    return n_bytes / d.xfer_bw


def offload_overlap_delay(compute: float, xfer: float, n_layers: int) -> float:
    """Transfer time left exposed by layer-wise pipelining.

    Layer i's KV moves while layer i+1 computes, so only the last layer's
    transfer has nothing to hide behind.
    """
    if compute < 0 or xfer < 0:
        raise ValueError("compute and xfer must be >= 0")
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    return max(0.0, xfer - compute * (n_layers - 1) / n_layers)


def model_fits(m: ModelSpec, d: DeviceSpec) -> bool:
    return weights_bytes(m) < d.hbm_bytes

