"""Reference models written independently of the package, used to derive expected
values. They follow the pseudo-code of the tag update and base lookup literally,
working on bit strings and explicit records instead of the package's masks."""

from __future__ import annotations

from dataclasses import dataclass


def split(v: int) -> tuple[int, int, int]:
    """(address, invalid, offset) of a 64-bit tagged value."""
    bits = format(v & (2**64 - 1), "064b")  # bits[0] is bit 63
    offset = int(bits[0:15], 2)
    invalid = int(bits[15], 2)
    address = int(bits[16:], 2)
    return address, invalid, offset


def join(address: int, invalid: int, offset: int) -> int:
    assert 0 <= address < 2**48 and invalid in (0, 1) and 0 <= offset < 2**15
    return int(format(offset, "015b") + str(invalid) + format(address, "048b"), 2)


def oracle_update_tag(base: int, ptr: int, access_size: int, limit: int) -> int:
    address, invalid, _ = split(ptr)
    if base == 0:
        return join(address, 1, 2**15 - 1)
    diff = (address - base) % 2**32
    offset = diff if diff < 0x7FFF else 0x7FFF
    if address < base or address + access_size > limit:
        invalid = 1
    return join(address, invalid, offset)


@dataclass
class ObjectWorld:
    """Just enough of an address space to answer base lookups: table objects
    (globals and anonymous mappings) as (base, size) pairs, segments as
    (start, size, slot size)."""

    globals_: list[tuple[int, int]]
    segments: list[tuple[int, int, int]]
    # address ranges resolved through the allocator's object table
    lookup_ranges: tuple[tuple[int, int], ...] = ((0x2000_0000, 0x3000_0000),
                                                  (0x6000_0000, 0x8000_0000))

    def allocator_base(self, addr: int) -> int:
        for b, s in self.globals_:
            if b <= addr <= b + s:
                return b
        return 0

    def slot_mask(self, addr: int) -> int:
        for start, size, slot in self.segments:
            if start <= addr < start + size:
                return (2**64 - 1) ^ (slot - 1)
        raise LookupError(hex(addr))


def oracle_get_base(sb: int, world: ObjectWorld) -> int:
    address, invalid, offset = split(sb)
    if offset < 0x7FFF:
        return address - offset
    if invalid:
        return 0
    if any(lo <= address < hi for lo, hi in world.lookup_ranges):
        return world.allocator_base(address)
    return (address & world.slot_mask(address)) + 8
