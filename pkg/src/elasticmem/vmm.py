"""Metadata-only emulation of a GPU virtual memory manager.

Physical chunks are fixed-size and labelled with an owning pool. Tensor slots
are chunk-aligned virtual spans; a slot's mapping lists the chunk backing each
offset. No memory is ever reserved, only the bookkeeping a driver would keep.

A chunk may be mapped into two slots at once while the old mapping waits in
the deferred-unmap queue. That is what lets a reclaimed chunk be handed to its
new slot before the (slow) unmap of its old slot has happened.
"""

from __future__ import annotations

import enum
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional


class Kind(str, enum.Enum):
    KV = "kv"
    ACT = "act"


class SlotState(str, enum.Enum):
    AVAILABLE = "available"
    IN_USE = "in_use"
    PENDING_UNMAP = "pending_unmap"


class VMMError(RuntimeError):
    pass


class ContinuityError(VMMError):
    """A KV slot was written past an unmapped offset."""


@dataclass
class PhysicalChunk:
    id: int
    owner: Kind
    mapped_into: set[int] = field(default_factory=set)


@dataclass(eq=False)
class TensorSlot:
    id: int
    base: int
    length_chunks: int
    kind: Kind
    state: SlotState = SlotState.IN_USE
    # mapping[i] is the chunk at offset i; None marks a hole left by a deferred
    # unmap. Offsets past len(mapping) are unmapped.
    mapping: list[Optional[int]] = field(default_factory=list)

    @property
    def mapped_chunks(self) -> int:
        return sum(c is not None for c in self.mapping)

    def end(self, chunk_bytes: int) -> int:
        return self.base + self.length_chunks * chunk_bytes


class AddressSpace:
    """One virtual address space plus the chunk registry it maps from.

    Costs are kept in integer nanoseconds so the accounting identity
    ``cost == map_count*map_cost + unmap_count*unmap_cost`` holds exactly.
    """

    def __init__(self, chunk_bytes: int, map_cost: float = 5e-6, unmap_cost: float = 10e-6,
                 virtual_ceiling: Optional[int] = None):
        if chunk_bytes <= 0:
            raise ValueError("chunk_bytes must be > 0")
        self.chunk_bytes = chunk_bytes
        self.map_cost_ns = round(map_cost * 1e9)
        self.unmap_cost_ns = round(unmap_cost * 1e9)
        self.virtual_ceiling = virtual_ceiling
        self.next_free_base = 0
        self.slots: dict[int, TensorSlot] = {}
        self.chunks: list[PhysicalChunk] = []
        self.deferred_unmaps: deque[tuple[int, int, int]] = deque()
        self._deferred_per_chunk: Counter[int] = Counter()
        self._deferred_entries: set[tuple[int, int]] = set()
        self.map_count = 0
        self.unmap_count = 0
        self.onpath_ns = 0
        self.background_ns = 0
        self._next_slot_id = 0

    # -- accounting -------------------------------------------------------

    @property
    def cost_ns(self) -> int:
        return self.onpath_ns + self.background_ns

    @property
    def cost_seconds(self) -> float:
        return self.cost_ns / 1e9

    def _charge(self, ns: int, background: bool) -> None:
        if background:
            self.background_ns += ns
        else:
            self.onpath_ns += ns

    # -- chunk registry ---------------------------------------------------

    def add_chunk(self, owner: Kind) -> PhysicalChunk:
        chunk = PhysicalChunk(len(self.chunks), owner)
        self.chunks.append(chunk)
        return chunk

    # -- slots --------------------------------------------------------------

    def _new_slot(self, base: int, length_chunks: int, kind: Kind, state: SlotState) -> TensorSlot:
        slot = TensorSlot(self._next_slot_id, base, length_chunks, kind, state)
        self._next_slot_id += 1
        self.slots[slot.id] = slot
        return slot

    def reserve_span(self, length_chunks: int, kind: Kind) -> TensorSlot:
        """Reserve a fresh chunk-aligned virtual span. Consumes no physical chunks."""
        if length_chunks < 1:
            raise ValueError("length_chunks must be >= 1")
        base = self.next_free_base
        end = base + length_chunks * self.chunk_bytes
        if self.virtual_ceiling is not None and end > self.virtual_ceiling:
            raise VMMError(f"virtual address space exhausted ({end} > {self.virtual_ceiling})")
        self.next_free_base = end
        return self._new_slot(base, length_chunks, kind, SlotState.IN_USE)

    def map_chunk(self, slot: TensorSlot, offset: int, chunk_id: int, background: bool = False) -> None:
        if not 0 <= offset < slot.length_chunks:
            raise VMMError(f"offset {offset} outside slot {slot.id} of {slot.length_chunks} chunks")
        chunk = self.chunks[chunk_id]
        if slot.id in chunk.mapped_into:
            raise VMMError(f"chunk {chunk_id} already mapped into slot {slot.id}")
        if self._deferred_per_chunk[chunk_id] < len(chunk.mapped_into):
            raise VMMError(f"chunk {chunk_id} is live in slot(s) {sorted(chunk.mapped_into)}")
        if len(chunk.mapped_into) >= 2:
            # a third mapping would exceed the overlap bound; finish the old unmaps now
            self._flush_chunk(chunk_id, background)
        if offset < len(slot.mapping):
            if slot.mapping[offset] is not None:
                raise VMMError(f"slot {slot.id} offset {offset} already mapped")
            if slot.kind is Kind.KV:
                raise ContinuityError(f"KV slot {slot.id}: offset {offset} is not the tail")
            slot.mapping[offset] = chunk_id
        elif offset == len(slot.mapping):
            slot.mapping.append(chunk_id)
        elif slot.kind is Kind.KV:
            raise ContinuityError(
                f"KV slot {slot.id}: write at offset {offset} but first unmapped offset is {len(slot.mapping)}")
        else:
            slot.mapping.extend([None] * (offset - len(slot.mapping)))
            slot.mapping.append(chunk_id)
        chunk.mapped_into.add(slot.id)
        self.map_count += 1
        self._charge(self.map_cost_ns, background)

    def _has_deferred(self, chunk_id: int) -> bool:
        return self._deferred_per_chunk[chunk_id] > 0

    def _flush_chunk(self, chunk_id: int, background: bool) -> None:
        """Synchronously perform every queued unmap of one chunk. Rare path."""
        keep: deque[tuple[int, int, int]] = deque()
        for entry in self.deferred_unmaps:
            if entry[2] == chunk_id:
                self._complete_deferred(entry, background)
            else:
                keep.append(entry)
        self.deferred_unmaps = keep

    def _complete_deferred(self, entry: tuple[int, int, int], background: bool) -> None:
        slot_id, off, chunk_id = entry
        self._deferred_per_chunk[chunk_id] -= 1
        if not self._deferred_per_chunk[chunk_id]:
            del self._deferred_per_chunk[chunk_id]
        self._deferred_entries.discard((slot_id, off))
        slot = self.slots[slot_id]
        if off < len(slot.mapping) and slot.mapping[off] == chunk_id:
            self._unmap_entry(slot, off, background)
        if slot.state is SlotState.PENDING_UNMAP and not slot.mapping:
            self.retire_slot(slot)

    def _defer(self, slot_id: int, offset: int, chunk_id: int) -> bool:
        if (slot_id, offset) in self._deferred_entries:
            return False
        self._deferred_entries.add((slot_id, offset))
        self.deferred_unmaps.append((slot_id, offset, chunk_id))
        self._deferred_per_chunk[chunk_id] += 1
        return True

    def live_offsets(self, slot: TensorSlot) -> list[int]:
        """Offsets of ``slot`` that are mapped and not queued for unmapping."""
        return [off for off, c in enumerate(slot.mapping)
                if c is not None and (slot.id, off) not in self._deferred_entries]

    def _unmap_entry(self, slot: TensorSlot, offset: int, background: bool) -> int:
        chunk_id = slot.mapping[offset]
        assert chunk_id is not None
        slot.mapping[offset] = None
        while slot.mapping and slot.mapping[-1] is None:
            slot.mapping.pop()
        self.chunks[chunk_id].mapped_into.discard(slot.id)
        self.unmap_count += 1
        self._charge(self.unmap_cost_ns, background)
        return chunk_id

    def remap_overlapped(self, from_slot: TensorSlot, to_slot: TensorSlot, offsets: Iterable[int],
                         background: bool = False) -> list[int]:
        """Map the chunks at ``offsets`` of ``from_slot`` onto the tail of ``to_slot``.

        The old mappings are queued for asynchronous unmapping; the chunks are
        usable through ``to_slot`` immediately. Returns the moved chunk ids.
        """
        offsets = list(offsets)
        if not offsets:
            return []
        if from_slot.state is SlotState.IN_USE:
            raise VMMError(f"slot {from_slot.id} is in use")
        if len(to_slot.mapping) + len(offsets) > to_slot.length_chunks:
            raise VMMError(f"slot {to_slot.id} cannot take {len(offsets)} more chunks")
        moved = []
        for off in offsets:
            if off >= len(from_slot.mapping) or from_slot.mapping[off] is None:
                raise VMMError(f"slot {from_slot.id} has nothing mapped at offset {off}")
            if (from_slot.id, off) in self._deferred_entries:
                raise VMMError(f"slot {from_slot.id} offset {off} is already being unmapped")
            moved.append(from_slot.mapping[off])
        if from_slot.kind is Kind.KV:
            # a KV slot that gives chunks away is being dismantled
            from_slot.state = SlotState.PENDING_UNMAP
        for off, chunk_id in zip(offsets, moved):
            self._defer(from_slot.id, off, chunk_id)
        for chunk_id in moved:
            self.map_chunk(to_slot, len(to_slot.mapping), chunk_id, background=background)
        return moved

    def defer_unmap_slot(self, slot: TensorSlot) -> list[int]:
        """Retire ``slot`` asynchronously; its chunks may be remapped right away."""
        if slot.state is SlotState.IN_USE:
            raise VMMError(f"slot {slot.id} is in use")
        slot.state = SlotState.PENDING_UNMAP
        freed = []
        for off, chunk_id in enumerate(slot.mapping):
            if chunk_id is not None and self._defer(slot.id, off, chunk_id):
                freed.append(chunk_id)
        if not slot.mapping:
            self.retire_slot(slot)
        return freed

    def drain_deferred(self, budget: Optional[int] = None) -> int:
        """Perform up to ``budget`` queued unmaps, charged off the critical path."""
        if budget is not None and budget < 0:
            raise ValueError("budget must be >= 0")
        drained = 0
        while self.deferred_unmaps and (budget is None or drained < budget):
            self._complete_deferred(self.deferred_unmaps.popleft(), background=True)
            drained += 1
        return drained

    def unmap_slot(self, slot: TensorSlot, background: bool = False) -> list[int]:
        """Synchronously unmap every chunk of a slot that is not in use."""
        if slot.state is SlotState.IN_USE:
            raise VMMError(f"slot {slot.id} is in use")
        freed = []
        for off in range(len(slot.mapping) - 1, -1, -1):
            if slot.mapping[off] is not None and (slot.id, off) not in self._deferred_entries:
                freed.append(self._unmap_entry(slot, off, background))
        freed.reverse()
        return freed

    def retire_slot(self, slot: TensorSlot) -> None:
        if slot.mapped_chunks:
            raise VMMError(f"slot {slot.id} still maps {slot.mapped_chunks} chunks")
        self.slots.pop(slot.id, None)

    def trim_tail(self, slot: TensorSlot, keep: int) -> list[int]:
        """Queue the unmap of every chunk at offset >= ``keep``; returns their ids."""
        freed = []
        # tail first, so a partial drain shortens the mapping from the end
        for off in range(len(slot.mapping) - 1, keep - 1, -1):
            chunk_id = slot.mapping[off]
            if chunk_id is not None and self._defer(slot.id, off, chunk_id):
                freed.append(chunk_id)
        return freed

    # -- activation region helpers (metadata only, no VMM calls) -----------

    def split_slot(self, slot: TensorSlot, head_chunks: int) -> TensorSlot:
        """Cut ``slot`` after ``head_chunks``; returns the new tail slot."""
        if not 0 < head_chunks < slot.length_chunks:
            raise ValueError("split point must fall strictly inside the slot")
        tail = self._new_slot(slot.base + head_chunks * self.chunk_bytes,
                              slot.length_chunks - head_chunks, slot.kind, slot.state)
        tail.mapping = slot.mapping[head_chunks:]
        slot.mapping = slot.mapping[:head_chunks]
        slot.length_chunks = head_chunks
        for chunk_id in tail.mapping:
            if chunk_id is not None:
                mi = self.chunks[chunk_id].mapped_into
                mi.discard(slot.id)
                mi.add(tail.id)
        return tail

    def merge_slots(self, left: TensorSlot, right: TensorSlot) -> TensorSlot:
        """Join two virtually adjacent slots; returns the surviving slot.

        The slot with more mapped entries survives so that only the smaller
        side's back-references need rewriting.
        """
        if left.end(self.chunk_bytes) != right.base or left.kind is not right.kind:
            raise ValueError("slots are not adjacent")
        pad = left.length_chunks - len(left.mapping)
        mapping = left.mapping + [None] * pad + right.mapping
        keep, drop = (left, right) if len(left.mapping) >= len(right.mapping) else (right, left)
        for chunk_id in drop.mapping:
            if chunk_id is not None:
                mi = self.chunks[chunk_id].mapped_into
                mi.discard(drop.id)
                mi.add(keep.id)
        keep.base = left.base
        keep.length_chunks = left.length_chunks + right.length_chunks
        keep.mapping = mapping
        self.slots.pop(drop.id)
        return keep

    # -- checks --------------------------------------------------------------

    def check(self) -> None:
        """Assert the structural invariants; raises VMMError on the first breach."""
        if Counter(c for _, _, c in self.deferred_unmaps) != self._deferred_per_chunk:
            raise VMMError("deferred-unmap bookkeeping out of sync")
        for chunk in self.chunks:
            n = len(chunk.mapped_into)
            if n > 2 or self._deferred_per_chunk[chunk.id] < n - 1:
                raise VMMError(f"chunk {chunk.id} mapped into {sorted(chunk.mapped_into)}")
        spans = sorted((s.base, s.end(self.chunk_bytes), s.id) for s in self.slots.values())
        for (_, e0, a), (b1, _, b) in zip(spans, spans[1:]):
            if b1 < e0:
                raise VMMError(f"slots {a} and {b} overlap")
        for slot in self.slots.values():
            if slot.base % self.chunk_bytes:
                raise VMMError(f"slot {slot.id} base not chunk-aligned")
            if slot.kind is Kind.KV and slot.state is not SlotState.PENDING_UNMAP:
                live = self.live_offsets(slot)
                if live != list(range(len(live))):
                    raise VMMError(f"KV slot {slot.id} live mapping has a hole")
            for chunk_id in slot.mapping:
                if chunk_id is not None and slot.id not in self.chunks[chunk_id].mapped_into:
                    raise VMMError(f"slot {slot.id} maps chunk {chunk_id} without back-reference")
        if self.cost_ns != self.map_count * self.map_cost_ns + self.unmap_count * self.unmap_cost_ns:
            raise VMMError("cost accounting drifted")
