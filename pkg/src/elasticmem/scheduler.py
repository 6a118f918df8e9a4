"""Iteration-level admission with elastic memory.

The planners are pure functions over a snapshot of pool counters. A request is
admitted only if every chunk it needs this iteration, KV and activation, fits
at once; the scan over the queue stops at the first request that does not fit
so the admitted set is always a prefix of the queue.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence


class Phase(str, enum.Enum):
    PREFILL = "prefill"
    DECODE = "decode"


@dataclass
class SchedulerConfig:
    # reserved headroom in chunks; None means theta_fraction of the pool
    theta: Optional[int] = None
    theta_fraction: float = 0.02
    prefill_priority: bool = True

    def resolve_theta(self, total_chunks: int) -> int:
        theta = self.theta if self.theta is not None else int(self.theta_fraction * total_chunks)
        if not 0 <= theta < total_chunks:
            raise ValueError(f"theta={theta} must lie in [0, {total_chunks})")
        return theta


class Counters(NamedTuple):
    total: int
    free_kv: int
    free_act: int


class Demand(NamedTuple):
    """What one request needs this iteration, in chunks."""
    request_id: int
    act: int
    kv: int
    # decode only: KV lives in the host buffer and must be fetched
    swapped: bool = False


@dataclass
class IterationPlan:
    phase: Phase
    batch: list[int] = field(default_factory=list)
    inflation: int = 0
    offloads: list[int] = field(default_factory=list)
    fetches: list[int] = field(default_factory=list)
    m_kv: int = 0
    m_act: int = 0
    buffer_left: int = 0

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "batch": list(self.batch),
            "inflation": self.inflation,
            "offloads": list(self.offloads),
            "fetches": list(self.fetches),
            "m_kv": self.m_kv,
            "m_act": self.m_act,
        }


def ballooning_directive(free_kv: int, free_act: int, m_kv: int, m_act: int) -> int:
    """Signed chunk transfer: >0 moves ACT->KV, <0 moves KV->ACT."""
    if free_kv < m_kv and free_act > m_act:
        return m_kv - free_kv
    if free_act < m_act and free_kv > m_kv:
        return free_act - m_act
    return 0


def plan_prefill(counters: Counters, theta: int, queue: Sequence[Demand], buffer_space: int) -> IterationPlan:
    plan = IterationPlan(Phase.PREFILL)
    m_kv = m_act = 0
    for d in queue:
        if counters.total - (m_kv + m_act + d.kv + d.act) >= theta:
            plan.batch.append(d.request_id)
            m_kv += d.kv
            m_act += d.act
        elif counters.total - (m_kv + m_act + d.act) >= theta and d.kv <= buffer_space:
            plan.batch.append(d.request_id)
            plan.offloads.append(d.request_id)
            m_act += d.act
            buffer_space -= d.kv
        else:
            break
    plan.m_kv, plan.m_act, plan.buffer_left = m_kv, m_act, buffer_space
    plan.inflation = ballooning_directive(counters.free_kv, counters.free_act, m_kv, m_act)
    return plan


def plan_decode(counters: Counters, theta: int, queue: Sequence[Demand]) -> IterationPlan:
    plan = IterationPlan(Phase.DECODE)
    m_kv = m_act = 0
    for d in queue:
        if counters.total - (m_kv + m_act + d.kv + d.act) >= theta:
            plan.batch.append(d.request_id)
            if d.swapped:
                plan.fetches.append(d.request_id)
            m_kv += d.kv
            m_act += d.act
        else:
            break
    plan.m_kv, plan.m_act = m_kv, m_act
    plan.inflation = ballooning_directive(counters.free_kv, counters.free_act, m_kv, m_act)
    return plan


def plan_partitioned(phase: Phase, counters: Counters, theta: int, queue: Sequence[Demand]) -> IterationPlan:
    """Static-partition admission: each pool must cover its own demand, no transfers."""
    plan = IterationPlan(phase)
    m_kv = m_act = 0
    for d in queue:
        if d.swapped:
            break
        if m_kv + d.kv <= counters.free_kv - theta and m_act + d.act <= counters.free_act:
            plan.batch.append(d.request_id)
            m_kv += d.kv
            m_act += d.act
        else:
            break
    plan.m_kv, plan.m_act = m_kv, m_act
    return plan


def select_phase(waiting: bool, prefill_plan: Optional[IterationPlan]) -> Phase:
    """Prefill whenever something is waiting and at least one prefill can be admitted."""
    if waiting and prefill_plan is not None and prefill_plan.batch:
        return Phase.PREFILL
    return Phase.DECODE
