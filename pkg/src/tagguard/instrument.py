"""Bounds-checking instrumentation of MIR modules.

The pass rewrites a plain module into a checked one:

* every memory access gets a bounds check against the object its static base
  belongs to, unless the access provably stays inside the first bytes of that base;
* every pointer that escapes (stored to memory, passed to or returned from a
  function, or written into a global initializer) gets its tag updated, unless it is
  an exact alias of its base;
* pointer comparisons and subtractions operate on untagged addresses;
* stack objects get headers and, when their address leaks, an allocator registration;
  objects too large to tag are moved to the heap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .mir.intrinsics import CHECKED_WRAPPERS, RUNTIME_PRIMITIVES, SIGNATURES
from .mir.ir import Const, Function, GlobalRef, Instr, Local, Module, Null, assign_iids
from .mir.cfg import CFG
from .mir.types import (I8, I8PTR, VOID, FuncType, MirType, PtrType, pointer_offsets, size_of,
                         unit_size)
from .staticbase import (INT_ARITH_SUSPECT, StaticBaseMap, compute_static_bases,
                         constant_displacement, pointee_size)
from .tags import MAX_OFFSET

STATS_SCHEMA = "tagguard-stats/1"


class UnsupportedConstruct(Exception):
    """The input uses something the instrumenter refuses to handle."""

    def __init__(self, message: str, function: str | None = None, line: int = 0):
        where = f"@{function}: " if function else ""
        super().__init__(f"{where}{message}")
        self.function = function
        self.line = line


@dataclass
class InstrumentOptions:
    size_invariant: bool = True
    loop_opt: bool = True
    hoist_negative_step: bool = False


@dataclass
class InstrumentationStats:
    checks_inserted: int = 0
    checks_elided: int = 0
    checks_hoisted: int = 0
    tag_updates_inserted: int = 0
    tag_updates_exempted: int = 0

    def as_dict(self) -> dict:
        return {
            "schema": STATS_SCHEMA,
            "checks_inserted": self.checks_inserted,
            "checks_elided": self.checks_elided,
            "checks_hoisted": self.checks_hoisted,
            "tag_updates_inserted": self.tag_updates_inserted,
            "tag_updates_exempted": self.tag_updates_exempted,
        }

    def add(self, other: InstrumentationStats) -> None:
        self.checks_inserted += other.checks_inserted
        self.checks_elided += other.checks_elided
        self.checks_hoisted += other.checks_hoisted
        self.tag_updates_inserted += other.tag_updates_inserted
        self.tag_updates_exempted += other.tag_updates_exempted


@dataclass
class InstrumentResult:
    module: Module
    stats: InstrumentationStats
    static_bases: dict[str, StaticBaseMap] = field(default_factory=dict)


def _gen(op: str, result=None, ty=None, args=(), sub=None, elem=None, loc=None, **attrs) -> Instr:
    a = {"gen": ()}
    for k, v in attrs.items():
        a[k] = v
    return Instr(op, result, ty, list(args), sub=sub, elem=elem, attrs=a, loc=loc)


class _Rewriter:
    """Per-function helper that tracks names, types and static bases."""

    def __init__(self, m: Module, f: Function, sbmap: StaticBaseMap | None = None):
        self.m = m
        self.f = f
        self.sb = sbmap
        self.taken = f.value_names()
        self.types: dict[str, MirType] = {p.name: p.ty for p in f.params}
        for _, ins in f.instructions():
            if ins.result is not None:
                self.types[ins.result] = ins.ty
        self.defs = f.definitions()

    def fresh(self, stem: str) -> str:
        return self.f.fresh_name(stem, self.taken)

    def type_of(self, v) -> MirType | None:
        if isinstance(v, Local):
            return self.types.get(v.name)
        if isinstance(v, GlobalRef):
            return self.m.symbol_type(v.name)
        return None

    def define(self, ins: Instr) -> Instr:
        if ins.result is not None:
            self.types[ins.result] = ins.ty
            self.defs[ins.result] = ins
        return ins

    def stem(self, v) -> str:
        if isinstance(v, Local):
            return v.name
        if isinstance(v, GlobalRef):
            return v.name
        return "null"

    def is_function(self, v) -> bool:
        return isinstance(v, GlobalRef) and self.m.function(v.name) is not None

    def untrusted(self, base) -> bool:
        """The base is a pointer forged from a constant address."""
        d = self.defs.get(base.name) if isinstance(base, Local) else None
        return d is not None and d.op == "intrinsic" and d.sub == "invalidate"

    def base_type(self, base) -> MirType | None:
        if self.sb is not None and isinstance(base, Local):
            t = self.sb.types.get(base.name)
            if t is not None:
                return t
        return self.type_of(base)


# -- object allocation ------------------------------------------------------------

def rewrite_allocations(m: Module) -> None:
    """Give objects a header, move untaggable stack objects to the heap, make pointer
    fields start out null and mark constant-address pointers invalid."""
    for g in m.globals:
        g.attrs["header"] = ()
    for f in m.functions:
        _rewrite_function_allocations(m, f)


def _rewrite_function_allocations(m: Module, f: Function) -> None:
    rw = _Rewriter(m, f)
    heap_objects: list[tuple[str, Local]] = []  # (defining block, heap pointer)
    for b in f.blocks:
        out: list[Instr] = []
        for ins in b.instrs:
            if ins.op == "alloca" and not ins.gen:
                size = size_of(ins.elem)
                if size >= MAX_OFFSET:
                    heap = rw.fresh(f"{ins.result}.heap")
                    out.append(rw.define(Instr("intrinsic", heap, I8PTR, [Const(size)],
                                               sub="malloc", loc=ins.loc, line=ins.line,
                                               col=ins.col, iid=ins.iid)))
                    out.append(rw.define(_gen("bitcast", ins.result, ins.ty, [Local(heap)],
                                              loc=ins.loc)))
                    heap_objects.append((b.label, Local(heap)))
                else:
                    ins.attrs["header"] = ()
                    out.append(ins)
                if pointer_offsets(ins.elem):
                    out.append(_gen("intrinsic", None, VOID, [Local(ins.result)],
                                    sub="init_ptr_fields"))
                continue
            if ins.op == "inttoptr" and isinstance(ins.args[0], Const) and ins.args[0].value:
                final = ins.result
                ins.result = rw.fresh(f"{final}.raw")
                out.append(rw.define(ins))
                out.append(rw.define(_gen("intrinsic", final, ins.ty, [Local(ins.result)],
                                          sub="invalidate", loc=ins.loc)))
                continue
            out.append(ins)
        b.instrs = out
    if not heap_objects:
        return
    cfg = CFG(f)
    for b in f.blocks:
        t = b.terminator
        if t is None or t.op != "ret":
            continue
        frees = [_gen("intrinsic", None, VOID, [h], sub="free")
                 for blk, h in heap_objects if cfg.dominates(blk, b.label)]
        b.instrs[-1:-1] = frees


# -- escapes ----------------------------------------------------------------------

@dataclass
class EscapeSite:
    instr: Instr
    index: int  # operand index inside instr.args
    access_size: int | None


def escape_sites(m: Module, f: Function, rw: _Rewriter) -> list[EscapeSite]:
    sites = []
    for _, ins in f.instructions():
        if ins.gen:
            continue
        if ins.op == "store" and ins.ty.resolved().is_pointer:
            sites.append(EscapeSite(ins, 0, pointee_size(ins.ty)))
        elif ins.op == "call":
            callee = m.function(ins.sub)
            for i, a in enumerate(ins.args):
                pt = callee.params[i].ty
                if pt.resolved().is_pointer:
                    sites.append(EscapeSite(ins, i, pointee_size(pt)))
        elif ins.op == "icall":
            ft = rw.type_of(ins.args[0])
            fn = ft.resolved().pointee.resolved() if ft is not None else None
            if isinstance(fn, FuncType):
                for i, pt in enumerate(fn.params):
                    if pt.resolved().is_pointer:
                        sites.append(EscapeSite(ins, i + 1, pointee_size(pt)))
        elif ins.op == "ret" and ins.args and ins.ty.resolved().is_pointer:
            sites.append(EscapeSite(ins, 0, pointee_size(ins.ty)))
    return sites


def is_exact_alias(rw: _Rewriter, v, access_size: int | None) -> bool:
    """v is its own base (or a zero-displacement cast of it) and the escape does not
    claim more bytes than the base's pointee type holds."""
    sb = rw.sb
    base = sb.base_of(v)
    if isinstance(base, Null) or rw.is_function(base) or sb.int_derived(v) or rw.untrusted(base):
        return False
    if constant_displacement(rw.defs, v) != 0:
        return False
    cap = pointee_size(rw.base_type(base))
    return access_size is not None and cap is not None and access_size <= cap


def insert_escape_tag_updates(m: Module, f: Function, rw: _Rewriter,
                              stats: InstrumentationStats) -> None:
    sites = escape_sites(m, f, rw)
    by_instr: dict[int, list[EscapeSite]] = {}
    for s in sites:
        by_instr.setdefault(id(s.instr), []).append(s)
    sb = rw.sb
    for b in f.blocks:
        out: list[Instr] = []
        for ins in b.instrs:
            for s in by_instr.get(id(ins), ()):
                v = ins.args[s.index]
                if isinstance(v, Null):
                    stats.tag_updates_exempted += 1
                    continue
                base = sb.base_of(v)
                vt = rw.type_of(v)
                if rw.is_function(base):
                    name = rw.fresh(f"{rw.stem(v)}.inv")
                    out.append(rw.define(_gen("intrinsic", name, vt, [v], sub="invalidate")))
                    ins.args[s.index] = Local(name)
                    stats.tag_updates_inserted += 1
                    continue
                if vt is not None and isinstance(vt.resolved().pointee.resolved(), FuncType):
                    # a function pointer value that is not a known function: its
                    # tag was set when the address first escaped
                    stats.tag_updates_exempted += 1
                    continue
                if is_exact_alias(rw, v, s.access_size):
                    stats.tag_updates_exempted += 1
                    continue
                gb = "get_base_alloc" if sb.provenance(v) == INT_ARITH_SUSPECT else "get_base"
                stem = rw.stem(v)
                bn, ln, tn = rw.fresh(f"{stem}.b"), rw.fresh(f"{stem}.l"), rw.fresh(f"{stem}.t")
                out.append(rw.define(_gen("intrinsic", bn, I8PTR, [base], sub=gb, safe=())))
                out.append(rw.define(_gen("intrinsic", ln, I8PTR, [Local(bn)], sub="obj_limit",
                                          safe=())))
                size = s.access_size if s.access_size is not None else 1
                out.append(rw.define(_gen("intrinsic", tn, vt,
                                          [Local(bn), v, Const(size), Local(ln)],
                                          sub="update_tag", loc=ins.loc)))
                ins.args[s.index] = Local(tn)
                stats.tag_updates_inserted += 1
            out.append(ins)
        b.instrs = out


def tag_global_initializers(m: Module, stats: InstrumentationStats) -> None:
    """Pointer slots initialized with the address of a symbol get their tag computed
    when the module is loaded. Exact aliases of a global variable are exempt."""
    for g in m.globals:
        refs = list(_init_refs(g.ty, g.init))
        needs = False
        for ty, (ref, off) in refs:
            target = m.global_(ref.name)
            size = pointee_size(ty)
            if target is not None and off == 0 and size is not None \
                    and size <= unit_size(target.ty):
                stats.tag_updates_exempted += 1
            else:
                stats.tag_updates_inserted += 1
                needs = True
        if needs:
            g.attrs["tagged"] = ()


def _init_refs(ty: MirType, init):
    from .mir.types import ArrayType, StructType, struct_offsets
    t = ty.resolved()
    if init is None:
        return
    if isinstance(t, PtrType) and isinstance(init, tuple):
        yield t, init
    elif isinstance(t, ArrayType) and isinstance(init, list):
        for item in init:
            yield from _init_refs(t.elem, item)
    elif isinstance(t, StructType) and isinstance(init, list):
        for ft, _, item in zip(t.fields, struct_offsets(t), init):
            yield from _init_refs(ft, item)


def register_escaping_allocas(f: Function, rw: _Rewriter) -> None:
    """Stack objects whose address leaks (as a tagged pointer or as an integer) are
    registered with the allocator so tag-less lookups can still find them."""
    sb = rw.sb
    leaked: set[str] = set()

    def note(v):
        if isinstance(v, Local) and v.name in sb:
            base = sb.base_of(v)
            if isinstance(base, Local):
                leaked.add(base.name)

    for _, ins in f.instructions():
        if ins.gen:
            continue
        if ins.op == "ptrtoint":
            note(ins.args[0])
        elif ins.op == "store":
            note(ins.args[0])
        elif ins.op in ("call", "icall", "ret"):
            for a in ins.args:
                t = rw.type_of(a)
                if t is not None and t.resolved().is_pointer:
                    note(a)
    for _, ins in f.instructions():
        if ins.op == "alloca" and ins.result in leaked:
            ins.attrs["register"] = ()


# -- comparisons ------------------------------------------------------------------

def normalize_compare_subtract(f: Function, rw: _Rewriter) -> None:
    """Pointer comparisons and subtractions see untagged addresses."""
    for b in f.blocks:
        out: list[Instr] = []
        for ins in b.instrs:
            is_ptr_cmp = ins.op == "icmp" and ins.elem is not None and ins.elem.resolved().is_pointer
            if (is_ptr_cmp or ins.op == "psub") and not ins.gen:
                for i, a in enumerate(ins.args):
                    if isinstance(a, (Null, Const)):
                        continue
                    name = rw.fresh(f"{rw.stem(a)}.rt")
                    out.append(rw.define(_gen("intrinsic", name, rw.type_of(a) or ins.elem, [a],
                                              sub="reset_tag")))
                    ins.args[i] = Local(name)
            out.append(ins)
        b.instrs = out


# -- access checks ----------------------------------------------------------------

def elidable(rw: _Rewriter, p, width: int) -> int | None:
    """Displacement of an access that provably stays inside its static base, or None."""
    sb = rw.sb
    base = sb.base_of(p)
    if isinstance(base, Null) or rw.is_function(base) or sb.int_derived(p) or rw.untrusted(base):
        return None
    d = constant_displacement(rw.defs, p)
    if d is None or d < 0:
        return None
    cap = pointee_size(rw.base_type(base))
    if cap is None or d + width > cap:
        return None
    return d


def lower_access_checks(m: Module, f: Function, rw: _Rewriter, opts: InstrumentOptions,
                        stats: InstrumentationStats) -> None:
    sb = rw.sb
    for b in f.blocks:
        cache: dict[tuple, tuple[Local, Local]] = {}
        out: list[Instr] = []

        def base_limit(v, alloc_lookup: bool):
            base = sb.base_of(v)
            key = (str(base), alloc_lookup)
            if key not in cache:
                stem = rw.stem(base)
                bn, ln = rw.fresh(f"{stem}.base"), rw.fresh(f"{stem}.lim")
                out.append(rw.define(_gen("intrinsic", bn, I8PTR, [base],
                                          sub="get_base_alloc" if alloc_lookup else "get_base")))
                out.append(rw.define(_gen("intrinsic", ln, I8PTR, [Local(bn)], sub="obj_limit")))
                cache[key] = (Local(bn), Local(ln))
            return cache[key]

        for ins in b.instrs:
            if ins.gen:
                out.append(ins)
                continue
            if ins.op in ("load", "store"):
                pi = 0 if ins.op == "load" else 1
                p = ins.args[pi]
                width = size_of(ins.ty)
                disp = elidable(rw, p, width) if opts.size_invariant else None
                if disp is not None:
                    stats.checks_elided += 1
                    if isinstance(p, Local):
                        name = rw.fresh(f"{p.name}.ro")
                        out.append(rw.define(_gen("intrinsic", name, rw.type_of(p), [p],
                                                  sub="reset_offset")))
                        ins.args[pi] = Local(name)
                        ins.attrs["recover"] = (p, disp)
                    out.append(ins)
                    continue
                stats.checks_inserted += 1
                bl, ll = base_limit(p, sb.provenance(p) == INT_ARITH_SUSPECT)
                stem = rw.stem(p)
                cn, en = rw.fresh(f"{stem}.c"), rw.fresh(f"{stem}.end")
                out.append(rw.define(_gen("intrinsic", cn, rw.type_of(p), [p], sub="reset_tag")))
                out.append(rw.define(_gen("gep", en, I8PTR, [Local(cn), Const(width)], elem=I8)))
                out.append(_gen("intrinsic", None, VOID, [bl, Local(cn), Local(en), ll],
                                sub="bounds_check", loc=ins.loc,
                                site=(ins.iid, "read" if ins.op == "load" else "write")))
                ins.args[pi] = Local(cn)
                out.append(ins)
                continue
            if ins.op == "intrinsic" and ins.sub in CHECKED_WRAPPERS:
                buffers = _BUFFER_ARGS[ins.sub]
                new_args = []
                for i, a in enumerate(ins.args):
                    new_args.append(a)
                    if i in buffers:
                        bl, ll = base_limit(a, sb.provenance(a) == INT_ARITH_SUSPECT
                                            if isinstance(a, Local) else False)
                        new_args.extend([bl, ll])
                        stats.checks_inserted += 1
                ins.sub = CHECKED_WRAPPERS[ins.sub]
                ins.args = new_args
                out.append(ins)
                continue
            if ins.op == "icall":
                fp = ins.args[0]
                if isinstance(fp, Local):
                    name = rw.fresh(f"{fp.name}.rt")
                    out.append(rw.define(_gen("intrinsic", name, rw.type_of(fp), [fp],
                                              sub="reset_tag")))
                    ins.args[0] = Local(name)
            out.append(ins)
            if ins.op == "call" or ins.op == "icall" or (
                    ins.op == "intrinsic" and ins.sub in ("free", "malloc")):
                # the callee may free or reallocate: cached limits go stale
                cache.clear()
        b.instrs = out


# operand positions of buffers for each wrapped library routine
_BUFFER_ARGS = {
    "memcpy": (0, 1), "memmove": (0, 1), "memset": (0,), "strlen": (0,),
    "strcpy": (0, 1), "strstr": (0, 1), "qsort": (0,),
}


# -- driver -----------------------------------------------------------------------

def _reject_unsupported(m: Module) -> None:
    if m.checked:
        raise UnsupportedConstruct("module is already instrumented")
    for f in m.functions:
        for _, ins in f.instructions():
            if ins.gen:
                raise UnsupportedConstruct("input contains generated instructions", f.name,
                                           ins.line)
            if ins.op == "intrinsic" and ins.sub in RUNTIME_PRIMITIVES:
                raise UnsupportedConstruct(f"input calls the runtime primitive {ins.sub}",
                                           f.name, ins.line)
            if ins.op == "intrinsic" and ins.sub not in SIGNATURES:
                raise UnsupportedConstruct(f"unknown intrinsic {ins.sub}", f.name, ins.line)
            if ins.op == "intrinsic" and ins.sub.endswith("_chk"):
                raise UnsupportedConstruct(f"input calls the checked wrapper {ins.sub}",
                                           f.name, ins.line)


def instrument_module(m: Module, opts: InstrumentOptions | None = None) -> InstrumentResult:
    """Return a checked copy of `m`. The input module is left untouched."""
    from .loopopt import hoist_loop_checks

    opts = opts or InstrumentOptions()
    _reject_unsupported(m)
    out = m.clone()
    stats = InstrumentationStats()
    for f in out.functions:
        assign_iids(f)
    rewrite_allocations(out)
    tag_global_initializers(out, stats)
    bases: dict[str, StaticBaseMap] = {}
    for f in out.functions:
        sbmap, _ = compute_static_bases(f, out)
        bases[f.name] = sbmap
        rw = _Rewriter(out, f, sbmap)
        register_escaping_allocas(f, rw)
        insert_escape_tag_updates(out, f, rw, stats)
        normalize_compare_subtract(f, rw)
        lower_access_checks(out, f, rw, opts, stats)
        if opts.loop_opt:
            stats.checks_hoisted += hoist_loop_checks(out, f, rw,
                                                      negative_step=opts.hoist_negative_step)
    out.attrs["checked"] = ()
    return InstrumentResult(out, stats, bases)


def instrument(m: Module, opts: InstrumentOptions | None = None
               ) -> tuple[Module, InstrumentationStats]:
    r = instrument_module(m, opts)
    return r.module, r.stats
