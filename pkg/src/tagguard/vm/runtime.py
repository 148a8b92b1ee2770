"""Runtime primitives inserted by the instrumenter, over raw 64-bit guest values."""

from __future__ import annotations

from ..allocator import Allocator
from ..memory import Fault
from ..tags import (ADDR_MASK, INVALID_BIT, MASK64, MAX_OFFSET, OBJ_HEADER_SIZE, OFFSET_MASK,
                    OFFSET_SHIFT)


def update_tag(base: int, ptr: int, access_size: int, limit: int) -> int:
    """Record ptr's offset from `base` in its tag and flag it when [ptr, ptr+access_size)
    leaves [base, limit). A null base yields a saturated, invalid tag."""
    addr = ptr & ADDR_MASK
    if base == 0:
        return (ptr & ADDR_MASK) | OFFSET_MASK | INVALID_BIT
    off = (addr - base) & 0xFFFF_FFFF  # unsigned 32-bit difference
    if off > MAX_OFFSET:
        off = MAX_OFFSET
    out = (ptr & ~OFFSET_MASK & MASK64) | (off << OFFSET_SHIFT)
    if addr < base or addr + access_size > limit:
        out |= INVALID_BIT
    return out


def get_base(sb: int, alloc: Allocator) -> int:
    """Base address of the object a tagged static base refers to, 0 when unknown.

    Raises Fault when the segment header word it has to read is not mapped.
    """
    off = (sb >> OFFSET_SHIFT) & MAX_OFFSET
    addr = sb & ADDR_MASK
    if off < MAX_OFFSET:
        return (addr - off) & MASK64
    if sb & INVALID_BIT:
        return 0
    if alloc.is_global_var(addr) or alloc.is_anon_mapping(addr):
        return alloc.get_base_allocator(addr)
    seg = addr & ~(alloc.segment_size - 1)
    slot_mask = alloc.mem.load(seg, 8)
    return (addr & slot_mask) + OBJ_HEADER_SIZE


def get_base_alloc(sb: int, alloc: Allocator) -> int:
    return alloc.get_base_allocator(sb & ADDR_MASK)


def obj_limit(base: int, alloc: Allocator) -> int:
    """base + size from the object header. Raises Fault if the header is unreadable."""
    if base < OBJ_HEADER_SIZE:
        raise Fault(base, 8)
    return base + alloc.mem.load(base - OBJ_HEADER_SIZE, 8)


def bounds_ok(base: int, ptr: int, ptrlimit: int, limit: int) -> bool:
    return not (ptr < base or ptrlimit > limit)


def safe_get_base(sb: int, alloc: Allocator) -> int:
    try:
        return get_base(sb, alloc)
    except Fault:
        return 0


def safe_obj_limit(base: int, alloc: Allocator) -> int:
    if base == 0:
        return 0
    try:
        return obj_limit(base, alloc)
    except Fault:
        return 0
