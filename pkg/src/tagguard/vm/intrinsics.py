"""Runtime primitives and library routines callable through `intrinsic`."""

from __future__ import annotations

from ..allocator import AllocError
from ..memory import Fault
from ..mir.ir import Instr, Local
from ..mir.types import FuncType, MirType, PtrType, pointer_offsets
from ..tags import ADDR_MASK, INVALID_BIT, MASK64, OFFSET_MASK
from . import runtime as rt
from .machine import Machine, Site, _bits, _signed, alloc_error
from .reports import GuestExit, VMError


def _operand_type(ins: Instr, i: int, types: dict) -> MirType | None:
    a = ins.args[i]
    return types.get(a.name) if isinstance(a, Local) else None


def compile_intrinsic(vm: Machine, ins: Instr, types: dict, site: Site):
    name = ins.sub
    r = ins.result
    gs = [vm._getter(a, _operand_type(ins, i, types)) for i, a in enumerate(ins.args)]
    safe = "safe" in ins.attrs
    alloc, mem, counters = vm.alloc, vm.mem, vm.counters
    handler = _LIBRARY.get(name)
    if handler is not None:
        impl = handler(vm, ins, types, site)

        def library(env):
            try:
                v = impl([g(env) for g in gs])
            except Fault as e:
                vm.abort("unmapped", site, f"{name}: access to unmapped memory",
                         address=e.address)
            except AllocError as e:
                alloc_error(vm, e, site)
            if r is not None:
                env[r] = v & ((1 << _bits(ins.ty)) - 1)
        return library

    if name == "update_tag":
        g0, g1, g2, g3 = gs

        def update_tag(env):
            counters["tag_updates"] += 1
            env[r] = rt.update_tag(g0(env), g1(env), g2(env), g3(env))
        return update_tag
    if name == "get_base":
        g0 = gs[0]
        if safe:
            return lambda env: env.__setitem__(r, rt.safe_get_base(g0(env), alloc))

        def get_base(env):
            sb = g0(env)
            try:
                env[r] = rt.get_base(sb, alloc)
            except Fault as e:
                vm.abort("unmapped", site, "segment header unreadable", address=sb & ADDR_MASK)
        return get_base
    if name == "get_base_alloc":
        g0 = gs[0]
        return lambda env: env.__setitem__(r, rt.get_base_alloc(g0(env), alloc))
    if name == "obj_limit":
        g0 = gs[0]
        if safe:
            return lambda env: env.__setitem__(r, rt.safe_obj_limit(g0(env), alloc))

        def obj_limit(env):
            b = g0(env)
            if b == 0:
                vm.abort("unmapped", site, "no object found for the static base", base=0)
            try:
                env[r] = rt.obj_limit(b, alloc)
            except Fault:
                vm.abort("unmapped", site, "object header unreadable", base=b)
        return obj_limit
    if name == "bounds_check":
        g0, g1, g2, g3 = gs
        site_attr = ins.attrs.get("site", ())
        iid = str(site_attr[0]) if site_attr else None
        kind = "oob-write" if len(site_attr) > 1 and site_attr[1] == "write" else "oob-read"

        def bounds_check(env):
            counters["bounds_checks"] += 1
            b, p, pe, lim = g0(env), g1(env), g2(env), g3(env)
            if p < b or pe > lim:
                vm.abort(kind, site, "bounds check failed", address=p, base=b, limit=lim,
                         iid=iid)
        return bounds_check
    if name == "reset_tag":
        g0 = gs[0]
        return lambda env: env.__setitem__(r, g0(env) & ADDR_MASK)
    if name == "reset_offset":
        g0 = gs[0]
        keep = ~OFFSET_MASK & MASK64
        return lambda env: env.__setitem__(r, g0(env) & keep)
    if name == "invalidate":
        g0 = gs[0]
        return lambda env: env.__setitem__(r, g0(env) | INVALID_BIT)
    if name == "hoist_guard":
        g0, g1 = gs
        site_attr = ins.attrs.get("site", ())
        iid = str(site_attr[0]) if site_attr else None

        def hoist_guard(env):
            lo, hi = g0(env), g1(env)
            if hi <= lo:
                vm.abort("hoist-guard", site, "hoisted range is empty or wrapped",
                         address=lo, limit=hi, iid=iid)
        return hoist_guard
    if name == "init_ptr_fields":
        g0 = gs[0]
        t = _operand_type(ins, 0, types)
        offs = pointer_offsets(t.resolved().pointee) if t is not None else []

        def init_ptr_fields(env):
            p = g0(env) & ADDR_MASK
            for o in offs:
                mem.store(p + o, 8, 0)
        return init_ptr_fields
    raise VMError(f"unknown intrinsic {name}")


# -- library routines ----------------------------------------------------------
# Each factory returns impl(args) -> value. Pointer arguments arrive tagged and are
# untagged here before use.

def _u(p: int) -> int:
    return p & ADDR_MASK


def _check(vm: Machine, site: Site, what: str, lo: int, hi: int, base: int, limit: int):
    vm.counters["bounds_checks"] += 1
    if lo < base or hi > limit:
        vm.abort("intrinsic-oob", site, f"{what} outside its object", address=lo, base=base,
                 limit=limit)


def _strlen_within(vm: Machine, site: Site, s: int, base: int, limit: int) -> int:
    n = 0
    while True:
        if s + n >= limit or s + n < base:
            vm.abort("intrinsic-oob", site, "string is not terminated inside its object",
                     address=s, base=base, limit=limit)
        if vm.mem.load(s + n, 1) == 0:
            return n
        n += 1


def _malloc(vm, ins, types, site):
    return lambda a: vm.alloc.alloc(a[0])


def _free(vm, ins, types, site):
    def free(a):
        p = _u(a[0])
        if p:
            vm.alloc.dealloc(p)
        return 0
    return free


def _mmap_anon(vm, ins, types, site):
    return lambda a: vm.alloc.map_anonymous(a[0])


def _memcpy(vm, ins, types, site):
    def memcpy(a):
        d, s, n = a
        if n:
            vm.mem.write(_u(d), vm.mem.read(_u(s), n))
        return d
    return memcpy


def _memset(vm, ins, types, site):
    def memset(a):
        d, c, n = a
        if n:
            vm.mem.write(_u(d), bytes([c & 0xFF]) * n)
        return d
    return memset


def _strlen(vm, ins, types, site):
    return lambda a: len(vm.mem.read_cstring(_u(a[0])))


def _strcpy(vm, ins, types, site):
    def strcpy(a):
        d, s = a
        vm.mem.write(_u(d), vm.mem.read_cstring(_u(s)) + b"\0")
        return d
    return strcpy


def _strstr(vm, ins, types, site):
    def strstr(a):
        h, n = _u(a[0]), _u(a[1])
        i = vm.mem.read_cstring(h).find(vm.mem.read_cstring(n))
        return 0 if i < 0 else h + i
    return strstr


def _sort(vm: Machine, site: Site, base: int, n: int, size: int, cmp: int, tag):
    mem = vm.mem

    def elem(k):
        return tag(base + k * size)

    for i in range(1, n):
        j = i
        while j > 0:
            v = vm.call_address(cmp, [elem(j - 1), elem(j)], site)
            if _signed(v & 0xFFFF_FFFF, 32) <= 0:
                break
            a, b = base + (j - 1) * size, base + j * size
            x, y = mem.read(a, size), mem.read(b, size)
            mem.write(a, y)
            mem.write(b, x)
            j -= 1


def _qsort(vm, ins, types, site):
    def qsort(a):
        base, n, size, cmp = a
        _sort(vm, site, _u(base), n, size, cmp, lambda p: p)
        return 0
    return qsort


def _print(vm, ins, types, site):
    t = _operand_type(ins, 0, types)
    bits = _bits(t) if t is not None else 64

    def print_(a):
        vm.stdout.append(f"{_signed(a[0] & ((1 << bits) - 1), bits)}\n")
        return 0
    return print_


def _exit(vm, ins, types, site):
    t = _operand_type(ins, 0, types)
    bits = _bits(t) if t is not None else 64

    def exit_(a):
        raise GuestExit(_signed(a[0] & ((1 << bits) - 1), bits))
    return exit_


def _memcpy_chk(vm, ins, types, site):
    name = ins.sub

    def memcpy_chk(a):
        d, bd, ld, s, bs, ls, n = a
        _check(vm, site, f"{name} destination", _u(d), _u(d) + n, bd, ld)
        _check(vm, site, f"{name} source", _u(s), _u(s) + n, bs, ls)
        if n:
            vm.mem.write(_u(d), vm.mem.read(_u(s), n))
        return d
    return memcpy_chk


def _memset_chk(vm, ins, types, site):
    def memset_chk(a):
        d, bd, ld, c, n = a
        _check(vm, site, "memset destination", _u(d), _u(d) + n, bd, ld)
        if n:
            vm.mem.write(_u(d), bytes([c & 0xFF]) * n)
        return d
    return memset_chk


def _strlen_chk(vm, ins, types, site):
    def strlen_chk(a):
        s, b, l = a
        vm.counters["bounds_checks"] += 1
        return _strlen_within(vm, site, _u(s), b, l)
    return strlen_chk


def _strcpy_chk(vm, ins, types, site):
    def strcpy_chk(a):
        d, bd, ld, s, bs, ls = a
        vm.counters["bounds_checks"] += 1
        n = _strlen_within(vm, site, _u(s), bs, ls)
        _check(vm, site, "strcpy destination", _u(d), _u(d) + n + 1, bd, ld)
        vm.mem.write(_u(d), vm.mem.read(_u(s), n) + b"\0")
        return d
    return strcpy_chk


def _strstr_chk(vm, ins, types, site):
    def strstr_chk(a):
        h, bh, lh, n, bn, ln = a
        vm.counters["bounds_checks"] += 2
        hl = _strlen_within(vm, site, _u(h), bh, lh)
        nl = _strlen_within(vm, site, _u(n), bn, ln)
        i = vm.mem.read(_u(h), hl).find(vm.mem.read(_u(n), nl))
        if i < 0:
            return 0
        vm.counters["tag_updates"] += 1
        return rt.update_tag(bh, (h + i) & MASK64, 1, lh)
    return strstr_chk


def _qsort_chk(vm, ins, types, site):
    def qsort_chk(a):
        base, b, l, n, size, cmp = a
        _check(vm, site, "qsort array", _u(base), _u(base) + n * size, b, l)

        def tag(p):
            vm.counters["tag_updates"] += 1
            return rt.update_tag(b, p, size, l)
        _sort(vm, site, _u(base), n, size, cmp, tag)
        return 0
    return qsort_chk


_LIBRARY = {
    "malloc": _malloc, "free": _free, "mmap_anon": _mmap_anon,
    "memcpy": _memcpy, "memmove": _memcpy, "memset": _memset, "strlen": _strlen,
    "strcpy": _strcpy, "strstr": _strstr, "qsort": _qsort, "print": _print, "exit": _exit,
    "memcpy_chk": _memcpy_chk, "memmove_chk": _memcpy_chk, "memset_chk": _memset_chk,
    "strlen_chk": _strlen_chk, "strcpy_chk": _strcpy_chk, "strstr_chk": _strstr_chk,
    "qsort_chk": _qsort_chk,
}
