"""Signatures of the builtin intrinsics callable with `intrinsic`.

Parameter kinds: "ptr" any pointer, "int" any integer, "fn" pointer to a function.
Result kinds: "void", "ptr", "int".
"""

from __future__ import annotations

from typing import NamedTuple


class Signature(NamedTuple):
    params: tuple[str, ...]
    result: str
    library: bool = False


SIGNATURES: dict[str, Signature] = {
    # library routines (wrapped: pointer arguments have their tags cleared)
    "malloc": Signature(("int",), "ptr", True),
    "free": Signature(("ptr",), "void", True),
    "memcpy": Signature(("ptr", "ptr", "int"), "ptr", True),
    "memmove": Signature(("ptr", "ptr", "int"), "ptr", True),
    "memset": Signature(("ptr", "int", "int"), "ptr", True),
    "strlen": Signature(("ptr",), "int", True),
    "strcpy": Signature(("ptr", "ptr"), "ptr", True),
    "strstr": Signature(("ptr", "ptr"), "ptr", True),
    "qsort": Signature(("ptr", "int", "int", "fn"), "void", True),
    "print": Signature(("int",), "void", True),
    "exit": Signature(("int",), "void", True),
    "mmap_anon": Signature(("int",), "ptr", True),
    # bounds-checked wrappers; every buffer is followed by its (base, limit) pair
    "memcpy_chk": Signature(("ptr", "ptr", "ptr", "ptr", "ptr", "ptr", "int"), "ptr", True),
    "memmove_chk": Signature(("ptr", "ptr", "ptr", "ptr", "ptr", "ptr", "int"), "ptr", True),
    "memset_chk": Signature(("ptr", "ptr", "ptr", "int", "int"), "ptr", True),
    "strlen_chk": Signature(("ptr", "ptr", "ptr"), "int", True),
    "strcpy_chk": Signature(("ptr", "ptr", "ptr", "ptr", "ptr", "ptr"), "ptr", True),
    "strstr_chk": Signature(("ptr", "ptr", "ptr", "ptr", "ptr", "ptr"), "ptr", True),
    "qsort_chk": Signature(("ptr", "ptr", "ptr", "int", "int", "fn"), "void", True),
    # runtime primitives inserted by the instrumenter
    "update_tag": Signature(("ptr", "ptr", "int", "ptr"), "ptr"),
    "get_base": Signature(("ptr",), "ptr"),
    "get_base_alloc": Signature(("ptr",), "ptr"),
    "obj_limit": Signature(("ptr",), "ptr"),
    "bounds_check": Signature(("ptr", "ptr", "ptr", "ptr"), "void"),
    "reset_tag": Signature(("ptr",), "ptr"),
    "reset_offset": Signature(("ptr",), "ptr"),
    "invalidate": Signature(("ptr",), "ptr"),
    "hoist_guard": Signature(("ptr", "ptr"), "void"),
    "init_ptr_fields": Signature(("ptr",), "void"),
}

# library routine -> its checked wrapper
CHECKED_WRAPPERS = {
    "memcpy": "memcpy_chk",
    "memmove": "memmove_chk",
    "memset": "memset_chk",
    "strlen": "strlen_chk",
    "strcpy": "strcpy_chk",
    "strstr": "strstr_chk",
    "qsort": "qsort_chk",
}

RUNTIME_PRIMITIVES = frozenset(n for n, s in SIGNATURES.items() if not s.library)
