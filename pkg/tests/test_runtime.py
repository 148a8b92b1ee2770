"""Conformance table for the tag update and base lookup primitives.

Expected values were computed once with tests/oracles.py against the
address layout produced by `_world()` and then frozen here.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ObjectWorld, join, oracle_get_base, oracle_update_tag, split
from tagguard.allocator import Allocator
from tagguard.memory import Fault
from tagguard.vm import runtime

HEAP = 0x40000008          # 400-byte heap object
HEAP_LIMIT = HEAP + 400
GLOBAL = 0x20000008        # 40000-byte global
GLOBAL2 = 0x20009C50       # 16-byte global
SEG = 0x100010008          # 0x9000-byte object in slot 1 of a 64K-slot segment
SEG_LIMIT = SEG + 0x9000
MMAP = 0x60001000          # 64K anonymous mapping


def _world() -> Allocator:
    a = Allocator()
    assert a.place_global(40000) == GLOBAL
    assert a.place_global(16) == GLOBAL2
    assert a.alloc(400) == HEAP
    assert a.alloc(0x9000) == SEG
    assert a.map_anonymous(0x10000) == MMAP
    return a


@pytest.fixture(scope="module")
def world() -> Allocator:
    return _world()


UPDATE_TAG_CASES = [
    # (base, ptr, access_size, limit, expected)
    pytest.param(HEAP, 0x4000001C, 4, HEAP_LIMIT, 0x2800004000001C, id="interior"),
    pytest.param(HEAP, 0x40000008, 400, HEAP_LIMIT, 0x40000008, id="whole-object-access"),
    pytest.param(HEAP, 0x40000198, 4, HEAP_LIMIT, 0x321000040000198, id="one-past-end"),
    pytest.param(HEAP, 0x40000194, 4, HEAP_LIMIT, 0x318000040000194, id="last-element"),
    pytest.param(HEAP, 0x40000195, 4, HEAP_LIMIT, 0x31B000040000195, id="straddles-limit"),
    pytest.param(HEAP, 0x40000004, 4, HEAP_LIMIT, 0xFFFF000040000004, id="below-base"),
    pytest.param(HEAP, 0x40000007, 1, HEAP_LIMIT, 0xFFFF000040000007, id="one-below-base"),
    pytest.param(HEAP, 0x40000197, 1, HEAP_LIMIT, 0x31E000040000197, id="last-byte"),
    pytest.param(HEAP, 0x100004000001C, 4, HEAP_LIMIT, 0x2900004000001C, id="invalid-bit-kept"),
    pytest.param(HEAP, 0x9A00004000001C, 4, HEAP_LIMIT, 0x2800004000001C, id="stale-offset-replaced"),
    pytest.param(HEAP, 0xFFFF00004000001C, 4, HEAP_LIMIT, 0x2900004000001C, id="saturated-invalid-in"),
    pytest.param(0, 0x4000001C, 4, HEAP_LIMIT, 0xFFFF00004000001C, id="null-base"),
    pytest.param(0, 0x0, 1, 0x0, 0xFFFF000000000000, id="null-base-null-ptr"),
    pytest.param(SEG, 0x100019008, 1, SEG_LIMIT, 0xFFFF000100019008, id="segment-one-past"),
    pytest.param(SEG, 0x100019000, 8, SEG_LIMIT, 0xFFFE000100019000, id="segment-last-word"),
    pytest.param(SEG, 0x100018006, 4, SEG_LIMIT, 0xFFFC000100018006, id="offset-max-minus-one"),
    pytest.param(SEG, 0x100018007, 4, SEG_LIMIT, 0xFFFE000100018007, id="offset-exactly-max"),
    pytest.param(SEG, 0x100018008, 4, SEG_LIMIT, 0xFFFE000100018008, id="offset-saturates"),
    pytest.param(SEG, 0x100019007, 2, SEG_LIMIT, 0xFFFF000100019007, id="segment-straddle"),
    pytest.param(HEAP, 0xA000040000008, 0, HEAP_LIMIT, 0x40000008, id="zero-width-at-base"),
    pytest.param(HEAP, 0x40000198, 0, HEAP_LIMIT, 0x320000040000198, id="zero-width-at-limit"),
    pytest.param(GLOBAL, 0x20009C44, 4, GLOBAL + 40000, 0xFFFE000020009C44, id="global-large"),
    pytest.param(HEAP, 0x14000000D, 4, HEAP_LIMIT, 0xB00014000000D, id="u32-difference-wraps"),
    pytest.param(HEAP, 0x40008007, 1, HEAP + 0x10000, 0xFFFE000040008007, id="max-in-bounds"),
]

GET_BASE_CASES = [
    # (tagged static base, expected base)
    pytest.param(0x40000008, HEAP, id="offset-zero"),
    pytest.param(0x2800004000001C, HEAP, id="offset-small"),
    pytest.param(0x2900004000001C, HEAP, id="invalid-small-offset-recovers"),
    pytest.param(0xFFFC000040008006, HEAP, id="offset-max-minus-one"),
    pytest.param(0x900004000000C, HEAP, id="invalid-offset-4"),
    pytest.param(0x323000040000199, HEAP, id="invalid-past-end"),
    pytest.param(0xFFFF000040000008, 0, id="invalid-saturated-heap"),
    pytest.param(0xFFFF000020008008, 0, id="invalid-saturated-global"),
    pytest.param(0xFFFF000100019008, 0, id="invalid-saturated-segment"),
    pytest.param(0xFFFE000020008008, GLOBAL, id="global-interior"),
    pytest.param(0xFFFE000020009C47, GLOBAL, id="global-last-byte"),
    pytest.param(0xFFFE000020009C48, GLOBAL, id="global-one-past"),
    pytest.param(0xFFFE000020009C54, GLOBAL2, id="second-global"),
    pytest.param(0xFFFE000020000000, 0, id="global-header-gap"),
    pytest.param(0xFFFE00002F000000, 0, id="global-range-empty"),
    pytest.param(0xFFFE000100018008, SEG, id="segment-interior"),
    pytest.param(0xFFFE000100019008, SEG, id="segment-one-past"),
    pytest.param(0xFFFE000100018007, SEG, id="segment-at-max"),
    pytest.param(0xFFFE00010001FFFF, SEG, id="segment-slot-last-byte"),
    pytest.param(0xFFFE000060009000, MMAP, id="anon-mapping"),
    pytest.param(0x2800010001001C, SEG, id="segment-small-offset"),
]


@pytest.mark.parametrize("base,ptr,size,limit,expected", UPDATE_TAG_CASES)
def test_update_tag_table(base, ptr, size, limit, expected):
    assert runtime.update_tag(base, ptr, size, limit) == expected
    assert oracle_update_tag(base, ptr, size, limit) == expected


@pytest.mark.parametrize("sb,expected", GET_BASE_CASES)
def test_get_base_table(world, sb, expected):
    assert runtime.get_base(sb, world) == expected


def test_table_size():
    assert len(UPDATE_TAG_CASES) + len(GET_BASE_CASES) >= 40


def _oracle_world(a: Allocator) -> ObjectWorld:
    objs = a.global_table + [(MMAP, 0x10000)]
    segs = [(s.start, s.size, s.slot_size) for s in a.segments.values()]
    return ObjectWorld(objs, segs)


@pytest.mark.parametrize("sb,expected", GET_BASE_CASES)
def test_get_base_table_matches_oracle(world, sb, expected):
    assert oracle_get_base(sb, _oracle_world(world)) == expected


def test_get_base_reads_unmapped_segment_header():
    a = Allocator()
    with pytest.raises(Fault):
        runtime.get_base(join(0x5000_0000_0000, 0, 0x7FFF), a)
    assert runtime.safe_get_base(join(0x5000_0000_0000, 0, 0x7FFF), a) == 0


def test_obj_limit(world):
    assert runtime.obj_limit(HEAP, world) == HEAP_LIMIT
    assert runtime.obj_limit(SEG, world) == SEG_LIMIT
    # global headers are written by the loader only for instrumented globals
    assert runtime.obj_limit(GLOBAL2, world) == GLOBAL2
    assert runtime.safe_obj_limit(0, world) == 0
    with pytest.raises(Fault):
        runtime.obj_limit(0x5000_0000, world)


@pytest.mark.parametrize("ptr,plimit,ok", [
    (HEAP, HEAP + 4, True), (HEAP - 1, HEAP + 3, False),
    (HEAP + 396, HEAP_LIMIT, True), (HEAP + 397, HEAP_LIMIT + 1, False),
])
def test_bounds_ok(ptr, plimit, ok):
    assert runtime.bounds_ok(HEAP, ptr, plimit, HEAP_LIMIT) is ok


def test_get_base_alloc_ignores_tag(world):
    assert runtime.get_base_alloc(join(HEAP + 40, 1, 0x7FFF), world) == HEAP
    assert runtime.get_base_alloc(join(0x4800_0000, 0, 0), world) == 0


addresses = st.integers(0, 2**48 - 1)


@settings(max_examples=400)
@given(base=addresses, addr=addresses, inv=st.integers(0, 1), off=st.integers(0, 0x7FFF),
       size=st.integers(0, 64), extent=st.integers(0, 2**20))
def test_update_tag_agrees_with_oracle(base, addr, inv, off, size, extent):
    ptr = join(addr, inv, off)
    limit = base + extent
    assert runtime.update_tag(base, ptr, size, limit) == oracle_update_tag(base, ptr, size, limit)


@settings(max_examples=300)
@given(addr=st.integers(0, 2**40), off=st.integers(0, 0x7FFE), inv=st.integers(0, 1))
def test_small_offset_path_agrees_with_oracle(addr, off, inv):
    a = Allocator()
    sb = join(addr + off, inv, off)
    assert runtime.get_base(sb, a) == oracle_get_base(sb, ObjectWorld([], []))
    assert split(runtime.update_tag(addr, sb, 1, addr + 1 + off))[0] == addr + off
