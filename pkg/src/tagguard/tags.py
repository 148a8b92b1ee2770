"""Bit layout of a tagged 64-bit guest pointer.

    bits  0..47   address
    bit   48      invalid
    bits 49..63   offset from the object base (saturates at MAX_OFFSET)
"""

from __future__ import annotations

from dataclasses import dataclass

MASK64 = (1 << 64) - 1
ADDR_BITS = 48
ADDR_MASK = (1 << ADDR_BITS) - 1
INVALID_BIT = 1 << 48
OFFSET_SHIFT = 49
MAX_OFFSET = 0x7FFF
OFFSET_MASK = MAX_OFFSET << OFFSET_SHIFT
TAG_MASK = MASK64 & ~ADDR_MASK
OBJ_HEADER_SIZE = 8


def address(v: int) -> int:
    return v & ADDR_MASK


def is_invalid(v: int) -> bool:
    return bool(v & INVALID_BIT)


def offset(v: int) -> int:
    return (v >> OFFSET_SHIFT) & MAX_OFFSET


def make(addr: int, offset: int = 0, invalid: bool = False) -> int:
    if not 0 <= offset <= MAX_OFFSET:
        raise ValueError(f"offset {offset:#x} does not fit in 15 bits")
    v = (addr & ADDR_MASK) | (offset << OFFSET_SHIFT)
    if invalid:
        v |= INVALID_BIT
    return v


def reset_tag(v: int) -> int:
    return v & ADDR_MASK


def reset_offset(v: int) -> int:
    return v & ~OFFSET_MASK & MASK64


def set_invalid(v: int) -> int:
    return v | INVALID_BIT


@dataclass(frozen=True)
class TaggedPointer:
    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= MASK64:
            raise ValueError("tagged pointer must be a 64-bit unsigned value")

    @classmethod
    def of(cls, addr: int, offset: int = 0, invalid: bool = False) -> TaggedPointer:
        return cls(make(addr, offset, invalid))

    @property
    def address(self) -> int:
        return address(self.raw)

    @property
    def invalid(self) -> bool:
        return is_invalid(self.raw)

    @property
    def offset(self) -> int:
        return offset(self.raw)

    def __repr__(self) -> str:
        return (f"TaggedPointer(address={self.address:#014x}, "
                f"invalid={int(self.invalid)}, offset={self.offset:#x})")
