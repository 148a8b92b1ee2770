from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import join, split
from tagguard import tags
from tagguard.tags import TaggedPointer

raw64 = st.integers(0, 2**64 - 1)


def test_layout_constants():
    assert tags.MAX_OFFSET == 0x7FFF
    assert tags.INVALID_BIT == 1 << 48
    assert tags.ADDR_MASK == 2**48 - 1
    assert tags.OFFSET_MASK | tags.INVALID_BIT | tags.ADDR_MASK == tags.MASK64
    assert tags.TAG_MASK == 0xFFFF << 48


@given(raw64)
def test_fields_match_bit_string_split(v):
    assert (tags.address(v), int(tags.is_invalid(v)), tags.offset(v)) == split(v)


@given(st.integers(0, 2**48 - 1), st.booleans(), st.integers(0, 0x7FFF))
def test_make_matches_join(addr, inv, off):
    assert tags.make(addr, off, inv) == join(addr, int(inv), off)


@given(raw64)
def test_reset_tag_clears_only_tag(v):
    r = tags.reset_tag(v)
    assert r == tags.address(v) and r < 2**48


@given(raw64)
def test_reset_offset_keeps_invalid(v):
    r = tags.reset_offset(v)
    assert tags.offset(r) == 0
    assert tags.is_invalid(r) == tags.is_invalid(v)
    assert tags.address(r) == tags.address(v)


@given(raw64)
def test_set_invalid_idempotent(v):
    once = tags.set_invalid(v)
    assert tags.set_invalid(once) == once
    assert tags.is_invalid(once)
    assert tags.offset(once) == tags.offset(v)


def test_make_rejects_wide_offset():
    with pytest.raises(ValueError):
        tags.make(0x1000, 0x8000)


def test_tagged_pointer_view():
    p = TaggedPointer.of(0x4000_0008, 20, True)
    assert (p.address, p.offset, p.invalid) == (0x4000_0008, 20, True)
    assert "offset=0x14" in repr(p)
    with pytest.raises(ValueError):
        TaggedPointer(-1)
    with pytest.raises(ValueError):
        TaggedPointer(2**64)
