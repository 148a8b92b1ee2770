"""Allocator for the simulated address space.

Small objects come from a page-granular heap whose spans are tracked in an ordered
extent map. Objects of at least MAX_OFFSET bytes come from size-aligned segments whose
power-of-two slots let an interior address recover its slot by masking. Stack objects,
globals and anonymous mappings each live in their own address range, separated by
unmapped gaps, so the range an address falls in identifies its allocation kind.
"""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass, field

from .memory import PAGE_SIZE, Memory, page_align_up
from .tags import MAX_OFFSET, OBJ_HEADER_SIZE

CODE_START = 0x0000_1000_0000
GLOBAL_START = 0x0000_2000_0000
GLOBAL_END = 0x0000_3000_0000
HEAP_START = 0x0000_4000_0000
HEAP_END = 0x0000_6000_0000
MMAP_START = 0x0000_6000_0000
MMAP_END = 0x0000_8000_0000
SEGMENT_START = 0x0001_0000_0000
SEGMENT_END = 0x6000_0000_0000
STACK_START = 0x7000_0000_0000
STACK_END = 0x7000_4000_0000

DEFAULT_SEGMENT_SIZE = 1 << 24
MAX_SEGMENT_SIZE = 1 << 32
GLOBAL_CACHE_SIZE = 8

SMALL_HEAP, SEGMENT_SLOT, STACK, GLOBAL, ANON_MAP = (
    "small-heap", "segment-slot", "stack", "global", "anon-map")


class AllocError(Exception):
    def __init__(self, kind: str, message: str, address: int = 0):
        self.kind = kind
        self.address = address
        super().__init__(message)


@dataclass
class AllocationRecord:
    base: int
    size: int
    kind: str
    live: bool = True
    span_start: int = 0
    span_size: int = 0


@dataclass
class Segment:
    start: int
    size: int
    k: int
    bitmap: bytearray
    meta_slots: int
    used: int = 0

    @property
    def slot_size(self) -> int:
        return 1 << self.k

    @property
    def slot_mask(self) -> int:
        return ~(self.slot_size - 1) & 0xFFFF_FFFF_FFFF_FFFF

    @property
    def nslots(self) -> int:
        return self.size >> self.k

    def is_set(self, i: int) -> bool:
        return bool(self.bitmap[i >> 3] & (1 << (i & 7)))

    def set(self, i: int, on: bool):
        if on:
            self.bitmap[i >> 3] |= 1 << (i & 7)
        else:
            self.bitmap[i >> 3] &= ~(1 << (i & 7)) & 0xFF

    def free_slot(self) -> int | None:
        for byte_i, b in enumerate(self.bitmap):
            if b != 0xFF:
                for bit in range(8):
                    i = byte_i * 8 + bit
                    if i < self.nslots and not b & (1 << bit):
                        return i
        return None


def slot_exponent(size: int) -> int:
    """Smallest k with 2**k >= size + header."""
    return max((size + OBJ_HEADER_SIZE - 1).bit_length(), 0)


def metadata_bytes(nslots: int) -> int:
    return page_align_up((nslots + 7) // 8 + 8)


@dataclass
class AllocatorStats:
    allocations: int = 0
    frees: int = 0
    live_bytes: int = 0
    segments_opened: int = 0
    slots_used: int = 0
    lookups: int = 0
    global_cache_hits: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Allocator:
    def __init__(self, memory: Memory | None = None, segment_size: int = DEFAULT_SEGMENT_SIZE):
        if segment_size & (segment_size - 1) or not PAGE_SIZE * 4 <= segment_size <= MAX_SEGMENT_SIZE:
            raise ValueError(f"segment size must be a power of two in [16K, 4G], got {segment_size}")
        self.mem = memory if memory is not None else Memory()
        self.segment_size = segment_size
        self.stats = AllocatorStats()
        self.records: dict[int, AllocationRecord] = {}
        # small heap: sorted span starts with parallel records
        self._heap_cursor = HEAP_START
        self._heap_starts: list[int] = []
        self._heap_recs: list[AllocationRecord] = []
        # segments
        self._seg_cursor = (SEGMENT_START + segment_size - 1) & ~(segment_size - 1)
        self.segments: dict[int, Segment] = {}
        self._open: dict[int, list[Segment]] = {}
        # stack
        self.stack_top = STACK_START
        self._stack_mapped_to = STACK_START
        self._stack_bases: list[int] = []
        self._stack_recs: list[AllocationRecord] = []
        # globals
        self._global_cursor = GLOBAL_START
        self._global_bases: list[int] = []
        self._global_recs: list[AllocationRecord] = []
        self._global_cache: OrderedDict[int, AllocationRecord] = OrderedDict()
        # anonymous mappings
        self._mmap_cursor = MMAP_START
        self._mmap_starts: list[int] = []
        self._mmap_recs: list[AllocationRecord] = []

    # -- heap ----------------------------------------------------------
    def alloc(self, size: int) -> int:
        """Allocate `size` bytes; returns the (untagged) base with its size in the header."""
        if size <= 0:
            size = 1
        if size >= MAX_OFFSET:
            base = self._segment_alloc(size)
        else:
            base = self._small_alloc(size)
        self.stats.allocations += 1
        self.stats.live_bytes += size
        return base

    def _small_alloc(self, size: int) -> int:
        span = page_align_up(size + OBJ_HEADER_SIZE)
        start = self._heap_cursor
        if start + span > HEAP_END:
            raise AllocError("out-of-memory", "small heap exhausted")
        self._heap_cursor = start + span + PAGE_SIZE  # unmapped guard page between spans
        self.mem.map(start, span)
        base = start + OBJ_HEADER_SIZE
        self.mem.store(start, 8, size)
        rec = AllocationRecord(base, size, SMALL_HEAP, True, start, span)
        self.records[base] = rec
        self._heap_starts.append(start)
        self._heap_recs.append(rec)
        return base

    def _new_segment(self, k: int) -> Segment:
        start = self._seg_cursor
        if start + self.segment_size > SEGMENT_END:
            raise AllocError("out-of-memory", "segment range exhausted")
        self._seg_cursor += self.segment_size
        nslots = self.segment_size >> k
        meta = metadata_bytes(nslots)
        meta_slots = -(-meta // (1 << k))
        seg = Segment(start, self.segment_size, k, bytearray((nslots + 7) // 8), meta_slots)
        for i in range(meta_slots):
            seg.set(i, True)
        self.mem.map(start, meta)
        self.mem.store(start, 8, seg.slot_mask)
        self._sync_bitmap(seg)
        self.segments[start] = seg
        self._open.setdefault(k, []).append(seg)
        self.stats.segments_opened += 1
        return seg

    def _sync_bitmap(self, seg: Segment):
        self.mem.write(seg.start + 8, bytes(seg.bitmap))

    def _segment_alloc(self, size: int) -> int:
        k = slot_exponent(size)
        if (1 << k) * 2 > self.segment_size:
            raise AllocError("out-of-memory",
                             f"allocation of {size} bytes exceeds the segment size")
        seg = None
        for s in self._open.get(k, []):
            if s.used + s.meta_slots < s.nslots:
                seg = s
                break
        if seg is None:
            seg = self._new_segment(k)
        i = seg.free_slot()
        seg.set(i, True)
        seg.used += 1
        self._sync_bitmap(seg)
        slot = seg.start + (i << k)
        span = page_align_up(size + OBJ_HEADER_SIZE)
        self.mem.map(slot, span)
        self.mem.zero(slot, span)
        self.mem.store(slot, 8, size)
        base = slot + OBJ_HEADER_SIZE
        self.records[base] = AllocationRecord(base, size, SEGMENT_SLOT, True, slot, span)
        self.stats.slots_used += 1
        return base

    def dealloc(self, addr: int) -> None:
        rec = self.records.get(addr)
        if rec is None or rec.kind not in (SMALL_HEAP, SEGMENT_SLOT, ANON_MAP):
            raise AllocError("double-free", f"free of {addr:#x}: not an allocation base", addr)
        if not rec.live:
            raise AllocError("double-free", f"double free of {addr:#x}", addr)
        rec.live = False
        self.mem.unmap(rec.span_start, rec.span_size)
        self.stats.frees += 1
        self.stats.live_bytes -= rec.size
        if rec.kind == SEGMENT_SLOT:
            seg = self.segments[rec.span_start & ~(self.segment_size - 1)]
            seg.set((rec.span_start - seg.start) >> seg.k, False)
            seg.used -= 1
            self._sync_bitmap(seg)
            self.stats.slots_used -= 1

    # -- anonymous mappings --------------------------------------------
    def map_anonymous(self, size: int) -> int:
        if size <= 0:
            raise AllocError("out-of-memory", "anonymous mapping of zero bytes")
        start = self._mmap_cursor
        span = PAGE_SIZE + page_align_up(size)
        if start + span > MMAP_END:
            raise AllocError("out-of-memory", "mmap range exhausted")
        self._mmap_cursor = start + span + PAGE_SIZE
        self.mem.map(start, span)
        base = start + PAGE_SIZE
        self.mem.store(base - 8, 8, size)
        rec = AllocationRecord(base, size, ANON_MAP, True, start, span)
        self.records[base] = rec
        self._mmap_starts.append(start)
        self._mmap_recs.append(rec)
        self.stats.allocations += 1
        self.stats.live_bytes += size
        return base

    # -- stack ---------------------------------------------------------
    def stack_mark(self) -> int:
        return self.stack_top

    def stack_alloc(self, size: int, align: int = 8) -> int:
        """Reserve a header word plus `size` bytes in the current frame (zero-filled)."""
        align = max(align, 8)
        base = -(-(self.stack_top + OBJ_HEADER_SIZE) // align) * align
        end = base + max(size, 0)
        if end > STACK_END:
            raise AllocError("out-of-memory", "stack overflow")
        if end > self._stack_mapped_to:
            self.mem.map(self._stack_mapped_to, page_align_up(end) - self._stack_mapped_to)
            self._stack_mapped_to = page_align_up(end)
        self.mem.zero(base - OBJ_HEADER_SIZE, end - base + OBJ_HEADER_SIZE)
        self.stack_top = end
        return base

    def stack_release(self, mark: int) -> None:
        self.stack_top = mark
        keep = page_align_up(mark)
        if keep < self._stack_mapped_to:
            self.mem.unmap(keep, self._stack_mapped_to - keep)
            self._stack_mapped_to = keep

    def register_stack_object(self, base: int, size: int) -> None:
        i = bisect.bisect_left(self._stack_bases, base)
        rec = AllocationRecord(base, size, STACK)
        if i < len(self._stack_bases) and self._stack_bases[i] == base:
            self._stack_recs[i] = rec
        else:
            self._stack_bases.insert(i, base)
            self._stack_recs.insert(i, rec)

    def deregister_stack_object(self, base: int) -> None:
        i = bisect.bisect_left(self._stack_bases, base)
        if i >= len(self._stack_bases) or self._stack_bases[i] != base:
            raise AllocError("internal", f"deregister of unknown stack object {base:#x}", base)
        del self._stack_bases[i]
        del self._stack_recs[i]

    def deregister_stack_above(self, mark: int) -> None:
        """Drop registrations of every object in frames released down to `mark`."""
        i = bisect.bisect_left(self._stack_bases, mark)
        del self._stack_bases[i:]
        del self._stack_recs[i:]

    # -- globals -------------------------------------------------------
    def place_global(self, size: int, align: int = 8) -> int:
        align = max(align, 8)
        base = -(-(self._global_cursor + OBJ_HEADER_SIZE) // align) * align
        end = base + size
        if end > GLOBAL_END:
            raise AllocError("out-of-memory", "global range exhausted")
        self.mem.map(base - OBJ_HEADER_SIZE, size + OBJ_HEADER_SIZE)
        self._global_cursor = end
        rec = AllocationRecord(base, size, GLOBAL)
        self._global_bases.append(base)
        self._global_recs.append(rec)
        return base

    def is_global_var(self, addr: int) -> bool:
        return GLOBAL_START <= addr < GLOBAL_END

    def is_anon_mapping(self, addr: int) -> bool:
        return MMAP_START <= addr < MMAP_END

    @property
    def global_table(self) -> list[tuple[int, int]]:
        return [(r.base, r.size) for r in self._global_recs]

    # -- base recovery -------------------------------------------------
    @staticmethod
    def _search(starts: list[int], recs: list[AllocationRecord], addr: int, key_is_base: bool):
        i = bisect.bisect_right(starts, addr) - 1
        if i < 0:
            return None
        rec = recs[i]
        lo = rec.base if key_is_base else rec.span_start
        if rec.live and lo <= addr and rec.base <= addr <= rec.base + rec.size:
            return rec
        return None

    def find_record(self, addr: int) -> AllocationRecord | None:
        """Live allocation containing `addr` (one-past-the-end included)."""
        if HEAP_START <= addr < HEAP_END:
            return self._search(self._heap_starts, self._heap_recs, addr, False)
        if SEGMENT_START <= addr < SEGMENT_END:
            seg = self.segments.get(addr & ~(self.segment_size - 1))
            if seg is None:
                return None
            slot = addr & seg.slot_mask
            rec = self.records.get(slot + OBJ_HEADER_SIZE)
            if rec is not None and rec.live and rec.base <= addr <= rec.base + rec.size:
                return rec
            return None
        if STACK_START <= addr < STACK_END:
            return self._search(self._stack_bases, self._stack_recs, addr, True)
        if GLOBAL_START <= addr < GLOBAL_END:
            for rec in self._global_cache.values():
                if rec.base <= addr <= rec.base + rec.size:
                    self._global_cache.move_to_end(rec.base)
                    self.stats.global_cache_hits += 1
                    return rec
            rec = self._search(self._global_bases, self._global_recs, addr, True)
            if rec is not None:
                self._global_cache[rec.base] = rec
                if len(self._global_cache) > GLOBAL_CACHE_SIZE:
                    self._global_cache.popitem(last=False)
            return rec
        if MMAP_START <= addr < MMAP_END:
            return self._search(self._mmap_starts, self._mmap_recs, addr, False)
        return None

    def get_base_allocator(self, addr: int) -> int:
        """Base of the live object containing `addr`, or 0 when there is none."""
        self.stats.lookups += 1
        rec = self.find_record(addr)
        return rec.base if rec is not None else 0

    def live_records(self) -> list[AllocationRecord]:
        return [r for r in self.records.values() if r.live]
