from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagguard import tags
from tagguard.allocator import (GLOBAL_START, HEAP_START, SEGMENT_START, SEGMENT_SLOT, SMALL_HEAP,
                                STACK_START, AllocError, Allocator, metadata_bytes,
                                slot_exponent)
from tagguard.memory import Fault
from tagguard.vm.runtime import get_base, obj_limit


def test_first_addresses():
    a = Allocator()
    assert a.alloc(10) == HEAP_START + 8
    assert a.place_global(4) == GLOBAL_START + 8
    assert a.alloc(0x9000) == SEGMENT_START + 0x10000 + 8


@pytest.mark.parametrize("size,k", [(1, 4), (8, 4), (9, 5), (0x7FFF, 16), (0xFFF8, 16),
                                    (0xFFF9, 17), (0x10000, 17)])
def test_slot_exponent(size, k):
    assert slot_exponent(size) == k
    assert 2**k >= size + 8 > 2 ** (k - 1)


def test_metadata_covers_bitmap():
    assert metadata_bytes(256) == 4096
    assert metadata_bytes(8 * 4096) == 8192


def test_small_vs_segment_threshold():
    a = Allocator()
    assert a.records[a.alloc(0x7FFE)].kind == SMALL_HEAP
    assert a.records[a.alloc(0x7FFF)].kind == SEGMENT_SLOT


def test_header_holds_size():
    a = Allocator()
    for n in (1, 100, 0x7FFF, 0x20000):
        b = a.alloc(n)
        assert a.mem.load(b - 8, 8) == n
        assert obj_limit(b, a) == b + n


def test_segment_header_word_is_slot_mask():
    a = Allocator()
    b = a.alloc(0x9000)
    seg = a.segments[b & ~(a.segment_size - 1)]
    assert a.mem.load(seg.start, 8) == seg.slot_mask == ~0xFFFF & tags.MASK64


def test_segment_interior_recovers_base():
    a = Allocator()
    b = a.alloc(50000)
    for off in (0, 0x7FFF, 40000, 50000):
        assert get_base(tags.make(b + off, tags.MAX_OFFSET), a) == b


def test_dealloc_unmaps_and_null_resolves():
    a = Allocator()
    b = a.alloc(64)
    a.dealloc(b)
    assert a.get_base_allocator(b) == 0
    with pytest.raises(Fault):
        a.mem.load(b, 4)


@pytest.mark.parametrize("size", [16, 0x9000])
def test_double_free(size):
    a = Allocator()
    b = a.alloc(size)
    a.dealloc(b)
    with pytest.raises(AllocError) as e:
        a.dealloc(b)
    assert e.value.kind == "double-free"


def test_free_of_interior_pointer():
    a = Allocator()
    b = a.alloc(32)
    with pytest.raises(AllocError):
        a.dealloc(b + 8)


def test_slot_is_reused_after_free():
    a = Allocator()
    b = a.alloc(0x9000)
    a.dealloc(b)
    assert a.alloc(0x9000) == b


def test_oversized_request_rejected():
    a = Allocator(segment_size=1 << 16)
    with pytest.raises(AllocError):
        a.alloc(1 << 16)


@pytest.mark.parametrize("bad", [1000, 1 << 13, (1 << 32) * 2])
def test_segment_size_validation(bad):
    with pytest.raises(ValueError):
        Allocator(segment_size=bad)


def test_global_lookup_and_cache():
    a = Allocator()
    gs = [a.place_global(16 * (i + 1)) for i in range(12)]
    for g in gs:
        assert a.get_base_allocator(g + 3) == g
    assert a.get_base_allocator(gs[-1] + 2) == gs[-1]
    assert a.stats.global_cache_hits >= 1
    assert a.get_base_allocator(gs[0] - 8) == 0


def test_stack_registry():
    a = Allocator()
    mark = a.stack_mark()
    b = a.stack_alloc(40)
    assert b >= STACK_START + 8
    a.register_stack_object(b, 40)
    assert a.get_base_allocator(b + 39) == b
    assert a.get_base_allocator(b + 40) == b  # one past the end
    a.deregister_stack_above(mark)
    a.stack_release(mark)
    assert a.get_base_allocator(b) == 0


def test_anonymous_mapping():
    a = Allocator()
    b = a.map_anonymous(5000)
    assert a.mem.load(b - 8, 8) == 5000
    assert a.get_base_allocator(b + 4999) == b
    assert a.is_anon_mapping(b)


def _check_invariants(a: Allocator, live: dict[int, int]):
    spans = sorted((r.span_start, r.span_start + r.span_size, r.base)
                   for r in a.records.values() if r.live)
    for (s0, e0, _), (s1, _, _) in zip(spans, spans[1:]):
        assert e0 <= s1, "overlapping spans"
    assert {r.base for r in a.live_records()} == set(live)
    for base, size in live.items():
        assert a.mem.load(base - 8, 8) == size, "header clobbered"
        rec = a.records[base]
        if rec.kind == SEGMENT_SLOT:
            k = slot_exponent(size)
            assert (base - 8) % (1 << k) == 0, "slot misaligned"
            probe = base + size // 2
            assert get_base(tags.make(probe, tags.MAX_OFFSET), a) == base
        assert a.get_base_allocator(base + size) == base


def _fuzz(seed: int, ops: int):
    rng = random.Random(seed)
    a = Allocator(segment_size=1 << 20)
    live: dict[int, int] = {}
    dead: list[int] = []
    for step in range(ops):
        if live and rng.random() < 0.45:
            base = rng.choice(list(live))
            del live[base]
            a.dealloc(base)
            dead.append(base)
        else:
            size = rng.choice([rng.randint(1, 256), rng.randint(257, 0x7FFE),
                               rng.randint(0x7FFF, 0x30000)])
            base = a.alloc(size)
            assert base not in live
            live[base] = size
            a.mem.store(base, 1, 0xAB)
            a.mem.store(base + size - 1, 1, 0xCD)
        if step % 500 == 0:
            _check_invariants(a, live)
    _check_invariants(a, live)
    for base in dead:
        if base not in live:
            assert a.get_base_allocator(base) == 0, "dead object still resolves"
    return a, live


def test_fuzz_interleavings():
    a, live = _fuzz(1234, 10_000)
    assert a.stats.allocations >= 5000
    assert a.stats.live_bytes == sum(live.values())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_fuzz_short_runs(seed):
    _fuzz(seed, 300)
