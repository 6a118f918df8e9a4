"""KV and activation tensor pools over one shared set of physical chunks.

Every chunk belongs to exactly one pool at a time (its owner label). A pool's
chunks are either

* free: not live in any slot (possibly still awaiting a deferred unmap),
* pooled: live in an Available slot, kept mapped so the next acquire of a
  similar size costs no mapping work, or
* in use: live in a slot held by an eTensor.

Inflation relabels ACT chunks as KV and deflation does the reverse. Neither
copies data; a relabelled chunk is mapped into its new slot on first write.

KV eTensors also carry a commitment (``needed`` chunks). The difference
between the commitment and what is already mapped is held back from the
``kv_budget`` so that on-demand writes can never run out of chunks.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

from .vmm import AddressSpace, Kind, SlotState, TensorSlot


class PoolError(RuntimeError):
    pass


class AdmissionFailure(PoolError):
    """Not enough chunks in the pool to honour an acquire."""


@dataclass(eq=False)
class ETensor:
    slot: TensorSlot
    kind: Kind
    needed: int
    owner_request: Optional[int] = None
    # chunks of ``slot`` this tensor can write without further mapping
    mapped: int = 0
    # chunks actually holding data
    written_chunks: int = 0
    released: bool = False


class PoolCounters(NamedTuple):
    total: int
    free_kv: int
    free_act: int
    in_use_kv: int
    in_use_act: int
    kv_budget: int


class UnifiedPhysicalPool:
    def __init__(self, space: AddressSpace, total_chunks: int, act_chunks: int,
                 premap_budget_bytes: int = 50 << 20):
        if not 0 <= act_chunks <= total_chunks:
            raise ValueError("act_chunks must lie in [0, total_chunks]")
        self.space = space
        self.total = total_chunks
        self.premap_budget_chunks = premap_budget_bytes // space.chunk_bytes
        self.free: dict[Kind, list[int]] = {Kind.KV: [], Kind.ACT: []}
        for i in range(total_chunks):
            owner = Kind.ACT if i < act_chunks else Kind.KV
            chunk = space.add_chunk(owner)
            self.free[owner].append(chunk.id)
        # pop() hands out the lowest ids first
        for ids in self.free.values():
            ids.reverse()
        self.pooled_chunks = {Kind.KV: 0, Kind.ACT: 0}
        self.in_use = {Kind.KV: 0, Kind.ACT: 0}
        self.outstanding_kv = 0
        # Available KV slots keyed (live chunks, base, id) for best-fit lookup
        self._kv_avail: list[tuple[int, int, int]] = []
        self._live: dict[int, int] = {}
        # Available activation regions, ordered by base address
        self._act_regions: list[tuple[int, int]] = []
        self.inflated = 0
        self.deflated = 0
        self.transfer_events: list[tuple[str, int]] = []

    # -- counters -------------------------------------------------------------

    @property
    def free_kv(self) -> int:
        """P_kv: KV-owned chunks that are unmapped or sit in reusable slots."""
        return len(self.free[Kind.KV]) + self.pooled_chunks[Kind.KV]

    @property
    def free_act(self) -> int:
        return len(self.free[Kind.ACT]) + self.pooled_chunks[Kind.ACT]

    @property
    def kv_budget(self) -> int:
        """Free KV chunks not already promised to in-flight KV tensors."""
        return self.free_kv - self.outstanding_kv

    def owned(self, kind: Kind) -> int:
        return sum(1 for c in self.space.chunks if c.owner is kind)

    def counters(self) -> PoolCounters:
        return PoolCounters(self.total, self.free_kv, self.free_act,
                            self.in_use[Kind.KV], self.in_use[Kind.ACT], self.kv_budget)

    def check(self) -> None:
        c = self.counters()
        if c.free_kv + c.free_act + c.in_use_kv + c.in_use_act != self.total:
            raise PoolError(f"chunk conservation broken: {c}")
        if self.owned(Kind.KV) != c.free_kv + c.in_use_kv:
            raise PoolError("KV ownership partition does not match counters")
        if c.kv_budget < 0:
            raise PoolError(f"KV commitments exceed free chunks: {c}")

    # -- chunk sourcing ---------------------------------------------------------

    def _reclaim_one(self, kind: Kind) -> Optional[TensorSlot]:
        """GC the largest Available slot of ``kind``; its chunks become free."""
        if kind is Kind.KV:
            if not self._kv_avail:
                return None
            _, _, slot_id = self._kv_avail.pop()
        else:
            if not self._act_regions:
                return None
            i = max(range(len(self._act_regions)),
                    key=lambda k: (self.space.slots[self._act_regions[k][1]].length_chunks, -k))
            _, slot_id = self._act_regions.pop(i)
        slot = self.space.slots[slot_id]
        assert slot.state is SlotState.AVAILABLE, "GC must never touch a slot in use"
        live = self._live.pop(slot_id)
        freed = self.space.defer_unmap_slot(slot)
        assert len(freed) == live
        self.pooled_chunks[kind] -= live
        self.free[kind].extend(freed)
        return slot

    def _take_free(self, kind: Kind, n: int) -> list[int]:
        while len(self.free[kind]) < n:
            if self._reclaim_one(kind) is None:
                raise AdmissionFailure(f"{kind.value} pool short of {n - len(self.free[kind])} chunks")
        return [self.free[kind].pop() for _ in range(n)]

    # -- KV tensors ---------------------------------------------------------------

    def best_fit_kv_slot(self, s: int) -> Optional[TensorSlot]:
        """Smallest Available KV slot with at least ``s`` live chunks, lowest base on ties."""
        i = bisect.bisect_left(self._kv_avail, (s, -1, -1))
        if i == len(self._kv_avail):
            return None
        return self.space.slots[self._kv_avail[i][2]]

    def kv_acquire(self, s: int, owner: Optional[int] = None) -> ETensor:
        """Acquire a KV tensor able to hold ``s`` chunks.

        Reuses the best-fitting pooled slot when one exists (no mapping work);
        otherwise reserves a fresh span that is mapped chunk by chunk on write.
        """
        if s < 1:
            raise ValueError("s must be >= 1")
        if s > self.kv_budget:
            raise AdmissionFailure(f"KV pool has {self.kv_budget} uncommitted chunks, need {s}")
        slot = self.best_fit_kv_slot(s)
        if slot is not None:
            live = self._live.pop(slot.id)
            self._kv_avail.remove((live, slot.base, slot.id))
            self.pooled_chunks[Kind.KV] -= live
            if live > s:
                self.free[Kind.KV].extend(self.space.trim_tail(slot, s))
            slot.state = SlotState.IN_USE
            self.in_use[Kind.KV] += s
            return ETensor(slot, Kind.KV, s, owner, mapped=s)
        slot = self.space.reserve_span(s, Kind.KV)
        self.outstanding_kv += s
        return ETensor(slot, Kind.KV, s, owner)

    def ensure_mapped(self, t: ETensor, n_chunks: int, background: bool = False) -> int:
        """Make the first ``n_chunks`` of a KV tensor writable; returns chunks mapped."""
        if t.released:
            raise PoolError("tensor already released")
        if n_chunks > t.needed:
            raise PoolError(f"write of {n_chunks} chunks exceeds commitment {t.needed}")
        added = 0
        while t.mapped < n_chunks:
            need = n_chunks - t.mapped
            if not self.free[Kind.KV] and self._kv_avail:
                # hand a pooled slot's chunks straight to this tensor; the old
                # mappings are unmapped later
                _, _, victim_id = self._kv_avail[-1]
                victim = self.space.slots[victim_id]
                take = min(need, self._live[victim_id])
                offsets = self.space.live_offsets(victim)[:take]
                self.space.remap_overlapped(victim, t.slot, offsets, background=background)
                self._kv_avail.pop()
                self._live.pop(victim_id)
                self.pooled_chunks[Kind.KV] -= take
                # whatever the victim still holds becomes free for later writes
                rest = self.space.defer_unmap_slot(victim)
                self.pooled_chunks[Kind.KV] -= len(rest)
                self.free[Kind.KV].extend(rest)
            else:
                chunk_id = self._take_free(Kind.KV, 1)[0]
                self.space.map_chunk(t.slot, t.mapped, chunk_id, background=background)
                take = 1
            t.mapped += take
            added += take
        self.outstanding_kv -= added
        self.in_use[Kind.KV] += added
        return added

    # -- activation tensors ---------------------------------------------------------

    def act_regions(self) -> list[tuple[int, int]]:
        """(base, length_chunks) of every free activation region, by address."""
        return [(base, self.space.slots[sid].length_chunks) for base, sid in self._act_regions]

    def act_acquire(self, n_bytes: int, owner: Optional[int] = None) -> ETensor:
        """Best-fit-with-coalescing allocation of an activation tensor."""
        if n_bytes < 1:
            raise ValueError("n_bytes must be >= 1")
        n = -(-n_bytes // self.space.chunk_bytes)
        if n > self.free_act:
            raise AdmissionFailure(f"activation pool has {self.free_act} chunks, need {n}")
        best = None
        for i, (base, sid) in enumerate(self._act_regions):
            length = self.space.slots[sid].length_chunks
            if length >= n and (best is None or length < best[0]):
                best = (length, i)
        if best is not None:
            length, i = best
            _, sid = self._act_regions.pop(i)
            slot = self.space.slots[sid]
            self._live.pop(sid)
            if length > n:
                # carve the allocation off the region's tail; the remainder keeps its slot
                region, slot = slot, self.space.split_slot(slot, length - n)
                self._live[region.id] = length - n
                bisect.insort(self._act_regions, (region.base, region.id))
            self.pooled_chunks[Kind.ACT] -= n
            slot.state = SlotState.IN_USE
            self.in_use[Kind.ACT] += n
            return ETensor(slot, Kind.ACT, n, owner, mapped=n, written_chunks=n)
        chunk_ids = self._take_free(Kind.ACT, n)
        slot = self.space.reserve_span(n, Kind.ACT)
        for off, chunk_id in enumerate(chunk_ids):
            self.space.map_chunk(slot, off, chunk_id)
        self.in_use[Kind.ACT] += n
        return ETensor(slot, Kind.ACT, n, owner, mapped=n, written_chunks=n)

    def _insert_act_region(self, slot: TensorSlot, live: int) -> None:
        """File a released activation slot as a free region, coalescing neighbours."""
        cb = self.space.chunk_bytes
        i = bisect.bisect_left(self._act_regions, (slot.base, slot.id))
        if i < len(self._act_regions):
            right = self.space.slots[self._act_regions[i][1]]
            if slot.end(cb) == right.base:
                live += self._live.pop(right.id)
                del self._act_regions[i]
                slot = self.space.merge_slots(slot, right)
        if i > 0:
            left = self.space.slots[self._act_regions[i - 1][1]]
            if left.end(cb) == slot.base:
                live += self._live.pop(left.id)
                del self._act_regions[i - 1]
                i -= 1
                slot = self.space.merge_slots(left, slot)
        self._live[slot.id] = live
        self._act_regions.insert(i, (slot.base, slot.id))

    # -- release ----------------------------------------------------------------------

    def release(self, t: ETensor) -> None:
        """Return a tensor's slot to its pool, still mapped, for reuse."""
        if t.released:
            raise PoolError(f"double release of slot {t.slot.id}")
        t.released = True
        slot = t.slot
        slot.state = SlotState.AVAILABLE
        self.in_use[t.kind] -= t.mapped
        self.pooled_chunks[t.kind] += t.mapped
        if t.kind is Kind.KV:
            self.outstanding_kv -= t.needed - t.mapped
            if t.mapped:
                self._live[slot.id] = t.mapped
                bisect.insort(self._kv_avail, (t.mapped, slot.base, slot.id))
            else:
                self.space.retire_slot(slot)
        else:
            self._insert_act_region(slot, t.mapped)

    # -- ballooning -------------------------------------------------------------------

    def _transfer(self, src: Kind, dst: Kind, amount: int) -> int:
        if amount <= 0:
            raise ValueError("amount must be > 0")
        while len(self.free[src]) < amount and self._reclaim_one(src) is not None:
            pass
        moved = min(amount, len(self.free[src]))
        if src is Kind.KV:
            # chunks promised to in-flight KV tensors are not up for grabs
            moved = min(moved, self.kv_budget)
        moved = max(moved, 0)
        chunks = self.space.chunks
        for _ in range(moved):
            chunk_id = self.free[src].pop()
            chunks[chunk_id].owner = dst
            self.free[dst].append(chunk_id)
        return moved

    def inflate(self, amount: int) -> int:
        """Move up to ``amount`` ACT chunks into the KV pool; returns the count moved."""
        moved = self._transfer(Kind.ACT, Kind.KV, amount)
        self.inflated += moved
        self.transfer_events.append(("inflate", moved))
        return moved

    def deflate(self, amount: int) -> int:
        """Give up to ``amount`` KV chunks back to the activation pool."""
        moved = self._transfer(Kind.KV, Kind.ACT, amount)
        self.deflated += moved
        self.transfer_events.append(("deflate", moved))
        return moved

    def apply_directive(self, inflation: int) -> int:
        """Execute a signed ballooning amount (>0 ACT->KV, <0 KV->ACT)."""
        if inflation > 0:
            return self.inflate(inflation)
        if inflation < 0:
            return -self.deflate(-inflation)
        return 0

    # -- speculative pre-mapping ------------------------------------------------------

    def speculative_premap(self, running: Iterable[tuple[ETensor, int]]) -> int:
        """Map ahead the chunk each running sequence will need for its next token.

        ``running`` yields (tensor, chunks needed after the next token). Work is
        charged off the critical path and capped by the pre-map budget.
        """
        done = 0
        for t, next_chunks in running:
            if done >= self.premap_budget_chunks:
                break
            if next_chunks > t.mapped and t.mapped < t.needed:
                if not self.free[Kind.KV] and not self._kv_avail:
                    break
                done += self.ensure_mapped(t, t.mapped + 1, background=True)
        return done
