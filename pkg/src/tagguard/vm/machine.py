"""Closure-compiling interpreter for MIR over the simulated address space."""

from __future__ import annotations

import operator
import sys
from dataclasses import dataclass, field

from ..allocator import CODE_START, AllocError, Allocator, DEFAULT_SEGMENT_SIZE
from ..memory import Fault, Memory
from ..mir.ir import Const, Function, GlobalRef, Instr, Local, Module, Null
from ..mir.types import (ArrayType, FuncType, IntType, MirType, PtrType, StructType, align_of,
                         pointer_offsets, size_of, struct_offsets, unit_size)
from ..tags import ADDR_MASK, INVALID_BIT, MASK64, MAX_OFFSET, OBJ_HEADER_SIZE, TAG_MASK
from . import runtime as rt
from .reports import GuestAbort, GuestExit, ViolationReport, VMError

MAX_CALL_DEPTH = 2000


def _bits(t: MirType) -> int:
    t = t.resolved()
    if isinstance(t, IntType):
        return t.width
    return 64


def _signed(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) & 1 else v


def _pointee_size(t: MirType) -> int:
    p = t.resolved().pointee.resolved() if isinstance(t.resolved(), PtrType) else None
    if p is None or p.is_void or isinstance(p, FuncType):
        return 1
    return size_of(p)


def _unit_pointee_size(t: MirType) -> int:
    p = t.resolved().pointee.resolved() if isinstance(t.resolved(), PtrType) else None
    if p is None or p.is_void or isinstance(p, FuncType):
        return 1
    return unit_size(p)


@dataclass
class Site:
    """Where an instruction lives, for reports."""

    function: str
    block: str
    iid: str | None
    loc: str | None = None


@dataclass
class CBlock:
    label: str
    index: int
    phis: list = field(default_factory=list)
    body: list = field(default_factory=list)
    term: object = None
    cost: int = 1


@dataclass
class CFunction:
    name: str
    params: list[str]
    param_bits: list[int]
    ret_bits: int
    blocks: list[CBlock] = field(default_factory=list)


class Machine:
    def __init__(self, module: Module, *, segment_size: int = DEFAULT_SEGMENT_SIZE,
                 step_limit: int | None = None, trace=None):
        self.m = module
        self.mem = Memory()
        self.alloc = Allocator(self.mem, segment_size)
        self.step_limit = step_limit
        self.trace_out = trace
        self.steps = 0
        self.depth = 0
        self.counters = {"bounds_checks": 0, "tag_updates": 0, "recoveries": 0}
        self.stdout: list[str] = []
        self.func_addr = {f.name: CODE_START + 16 * i for i, f in enumerate(module.functions)}
        self.addr_func = {a: n for n, a in self.func_addr.items()}
        self.global_addr: dict[str, int] = {}
        self._compiled: dict[str, CFunction] = {}
        self._load_globals()

    # -- loading -------------------------------------------------------
    def symbol_address(self, name: str) -> int:
        if name in self.global_addr:
            return self.global_addr[name]
        if name in self.func_addr:
            return self.func_addr[name]
        raise VMError(f"unknown symbol @{name}")

    def _load_globals(self):
        for g in self.m.globals:
            size = size_of(g.ty)
            base = self.alloc.place_global(size, align_of(g.ty) if size else 8)
            self.global_addr[g.name] = base
            if "header" in g.attrs:
                self.mem.store(base - OBJ_HEADER_SIZE, 8, size)
        for g in self.m.globals:
            self._write_init(self.global_addr[g.name], g.ty, g.init, "tagged" in g.attrs)

    def _write_init(self, addr: int, ty: MirType, init, tagged: bool):
        t = ty.resolved()
        if init is None:
            return
        if isinstance(init, Null):
            self.mem.store(addr, 8, 0)
        elif isinstance(init, int):
            self.mem.store(addr, size_of(t), init)
        elif isinstance(init, bytes):
            self.mem.write(addr, init)
        elif isinstance(init, tuple):
            ref, off = init
            value = (self.symbol_address(ref.name) + off) & MASK64
            if tagged:
                if ref.name in self.func_addr:
                    value |= INVALID_BIT
                else:
                    g = self.m.global_(ref.name)
                    base = self.global_addr[ref.name]
                    value = rt.update_tag(base, value, _unit_pointee_size(t),
                                          base + size_of(g.ty))
                    self.counters["tag_updates"] += 1
            self.mem.store(addr, 8, value)
        elif isinstance(t, ArrayType):
            step = size_of(t.elem)
            for i, item in enumerate(init):
                self._write_init(addr + i * step, t.elem, item, tagged)
        elif isinstance(t, StructType):
            for item, ft, o in zip(init, t.fields, struct_offsets(t)):
                self._write_init(addr + o, ft, item, tagged)

    # -- reports -------------------------------------------------------
    def abort(self, kind: str, site: Site, message: str = "", *, address=None, base=None,
              limit=None, iid=None):
        raise GuestAbort(ViolationReport(kind, site.function, site.block, iid or site.iid,
                                         address, base, limit, message, site.loc))

    def _trace(self, text: str):
        if self.trace_out is not None:
            print(f"trace: {text}", file=self.trace_out)

    # -- compilation ---------------------------------------------------
    def compiled(self, name: str) -> CFunction:
        cf = self._compiled.get(name)
        if cf is None:
            f = self.m.function(name)
            if f is None:
                raise VMError(f"call to unknown function @{name}")
            cf = self._compile(f)
            self._compiled[name] = cf
        return cf

    def _compile(self, f: Function) -> CFunction:
        types: dict[str, MirType] = {p.name: p.ty for p in f.params}
        for _, ins in f.instructions():
            if ins.result is not None:
                types[ins.result] = ins.ty
        cf = CFunction(f.name, [p.name for p in f.params], [_bits(p.ty) for p in f.params],
                       0 if f.ret.is_void else _bits(f.ret))
        index = {b.label: i for i, b in enumerate(f.blocks)}
        for i, b in enumerate(f.blocks):
            cb = CBlock(b.label, i)
            owners = self._owners(b.instrs)
            for ins, owner in zip(b.instrs, owners):
                site = Site(f.name, b.label, owner, ins.loc)
                if ins.op == "phi":
                    getters = {lab: self._getter(a, ins.ty) for a, lab in zip(ins.args, ins.labels)}
                    cb.phis.append((ins.result, getters))
                elif ins.is_terminator:
                    cb.term = self._terminator(ins, index, f, site)
                else:
                    op = self._op(ins, types, site)
                    if self.trace_out is not None:
                        op = self._traced(op, ins, site)
                    cb.body.append(op)
            if cb.term is None:
                raise VMError(f"block {b.label} of @{f.name} has no terminator")
            cb.cost = len(cb.phis) + len(cb.body) + 1
            cf.blocks.append(cb)
        return cf

    @staticmethod
    def _owners(instrs: list[Instr]) -> list[str | None]:
        # a generated instruction reports against the next original instruction it serves
        out: list[str | None] = [None] * len(instrs)
        nxt = None
        for i in range(len(instrs) - 1, -1, -1):
            ins = instrs[i]
            if not ins.gen:
                nxt = ins.iid
            out[i] = ins.iid if not ins.gen else nxt
        return out

    def _traced(self, op, ins: Instr, site: Site):
        res = ins.result
        label = f"@{site.function} {site.block} {ins.iid or '(gen)'} {ins.op}" + \
            (f" {ins.sub}" if ins.sub else "")

        def traced(env):
            op(env)
            if res is not None:
                self._trace(f"{label} %{res} = {env[res]:#x}")
            else:
                self._trace(label)
        return traced

    def _getter(self, a, ty: MirType | None):
        if isinstance(a, Local):
            return operator.itemgetter(a.name)
        if isinstance(a, Const):
            bits = _bits(ty) if ty is not None else 64
            v = a.value & ((1 << bits) - 1)
            return lambda env: v
        if isinstance(a, GlobalRef):
            v = self.symbol_address(a.name)
            return lambda env: v
        if isinstance(a, Null):
            return lambda env: 0
        raise VMError(f"bad operand {a!r}")

    def _terminator(self, ins: Instr, index: dict, f: Function, site: Site):
        if ins.op == "br":
            target = index[ins.labels[0]]
            return lambda env: target
        if ins.op == "condbr":
            g = self._getter(ins.args[0], None)
            t, e = index[ins.labels[0]], index[ins.labels[1]]
            return lambda env: t if g(env) else e
        if ins.args:
            g = self._getter(ins.args[0], f.ret)
            return lambda env: (g(env),)
        return lambda env: (0,)

    # -- execution -----------------------------------------------------
    def invoke(self, cf: CFunction, args: list[int]):
        if len(args) != len(cf.params):
            raise VMError(f"@{cf.name} expects {len(cf.params)} arguments, got {len(args)}")
        env = dict(zip(cf.params, args))
        alloc = self.alloc
        mark = alloc.stack_mark()
        self.depth += 1
        if self.depth > MAX_CALL_DEPTH:
            raise VMError("call depth limit exceeded")
        limit = self.step_limit
        try:
            blk = cf.blocks[0]
            prev = None
            blocks = cf.blocks
            while True:
                self.steps += blk.cost
                if limit is not None and self.steps > limit:
                    raise VMError(f"step limit of {limit} exceeded")
                if blk.phis:
                    try:
                        vals = [(r, g[prev](env)) for r, g in blk.phis]
                    except KeyError:
                        raise VMError(f"phi in {blk.label} has no value for edge from {prev}")
                    for r, v in vals:
                        env[r] = v
                for op in blk.body:
                    op(env)
                nxt = blk.term(env)
                if nxt.__class__ is int:
                    prev = blk.label
                    blk = blocks[nxt]
                else:
                    return nxt[0]
        finally:
            self.depth -= 1
            alloc.deregister_stack_above(mark)
            alloc.stack_release(mark)

    def call_address(self, target: int, args: list[int], site: Site) -> int:
        name = self.addr_func.get(target & ADDR_MASK)
        if name is None:
            self.abort("unmapped", site, "indirect call to a non-function address",
                       address=target & ADDR_MASK)
        return self.invoke(self.compiled(name), args)

    def run(self, entry: str, argv: list[int]) -> int:
        cf = self.compiled(entry)
        if len(argv) != len(cf.params):
            raise VMError(f"@{entry} expects {len(cf.params)} arguments, got {len(argv)}")
        args = [a & ((1 << b) - 1) for a, b in zip(argv, cf.param_bits)]
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 20000))
        try:
            r = self.invoke(cf, args)
        finally:
            sys.setrecursionlimit(old)
        if cf.ret_bits == 0:
            return 0
        return _signed(r, cf.ret_bits)

    # -- memory access with fault recovery ------------------------------
    def _fault(self, site: Site, p: int, width: int, env, recover, is_write: bool) -> int:
        """Resolve a fault at address p; returns the address to retry the access at."""
        kind = "oob-write" if is_write else "oob-read"
        if not p & TAG_MASK:
            self.abort("unmapped", site, "access to unmapped memory", address=p)
        if recover is None:
            self.abort("invalid-unrecoverable", site, "access through an invalid pointer",
                       address=p & ADDR_MASK)
        tagged = env[recover[0].name]
        disp = recover[1]
        off = (tagged >> 49) & MAX_OFFSET
        addr = tagged & ADDR_MASK
        if off == MAX_OFFSET:
            self.abort("invalid-unrecoverable", site,
                       "invalid pointer with saturated offset", address=addr)
        base = (addr - disp - off) & MASK64
        try:
            limit = rt.obj_limit(base, self.alloc)
        except Fault:
            self.abort("unmapped", site, "object header unreadable during recovery",
                       address=addr, base=base)
        if not rt.bounds_ok(base, addr, addr + width, limit):
            self.abort(kind, site, "recovery bounds check failed", address=addr, base=base,
                       limit=limit)
        self.counters["recoveries"] += 1
        return addr

    def _op(self, ins: Instr, types: dict, site: Site):
        op = ins.op
        r = ins.result
        mem = self.mem
        if op == "alloca":
            size = size_of(ins.elem)
            align = align_of(ins.elem) if size else 8
            header = "header" in ins.attrs
            register = "register" in ins.attrs
            alloc = self.alloc

            def alloca(env):
                base = alloc.stack_alloc(size, align)
                if header:
                    mem.store(base - OBJ_HEADER_SIZE, 8, size)
                if register:
                    alloc.register_stack_object(base, size)
                env[r] = base
            return alloca
        if op == "gep":
            gb = self._getter(ins.args[0], None)
            it = ins.args[1]
            scale = size_of(ins.elem)
            if isinstance(it, Const):
                disp = (it.value * scale) & MASK64
                return lambda env: env.__setitem__(r, (gb(env) + disp) & MASK64)
            gi = operator.itemgetter(it.name)
            ibits = _bits(types[it.name])
            sign = 1 << (ibits - 1)
            full = 1 << ibits

            def gep(env):
                i = gi(env)
                if i & sign:
                    i -= full
                env[r] = (gb(env) + i * scale) & MASK64
            return gep
        if op == "load":
            gp = self._getter(ins.args[0], None)
            width = size_of(ins.ty)
            recover = ins.attrs.get("recover")

            def load(env):
                p = gp(env)
                try:
                    env[r] = mem.load(p, width)
                except Fault:
                    a = self._fault(site, p, width, env, recover, False)
                    try:
                        env[r] = mem.load(a, width)
                    except Fault:
                        self.abort("unmapped", site, "access to unmapped memory", address=a)
            return load
        if op == "store":
            gv = self._getter(ins.args[0], ins.ty)
            gp = self._getter(ins.args[1], None)
            width = size_of(ins.ty)
            recover = ins.attrs.get("recover")

            def store(env):
                p = gp(env)
                v = gv(env)
                try:
                    mem.store(p, width, v)
                except Fault:
                    a = self._fault(site, p, width, env, recover, True)
                    try:
                        mem.store(a, width, v)
                    except Fault:
                        self.abort("unmapped", site, "access to unmapped memory", address=a)
            return store
        if op == "bitcast":
            g = self._getter(ins.args[0], None)
            return lambda env: env.__setitem__(r, g(env))
        if op in ("ptrtoint", "inttoptr", "conv"):
            src_ty = ins.elem if op == "conv" else (types.get(ins.args[0].name)
                                                   if isinstance(ins.args[0], Local) else None)
            g = self._getter(ins.args[0], src_ty if op != "ptrtoint" else None)
            dmask = (1 << _bits(ins.ty)) - 1
            if op == "conv" and ins.sub == "sext":
                sbits = _bits(ins.elem)
                sign, full = 1 << (sbits - 1), 1 << sbits

                def sext(env):
                    v = g(env)
                    env[r] = (v - full if v & sign else v) & dmask
                return sext
            return lambda env: env.__setitem__(r, g(env) & dmask)
        if op == "select":
            gc = self._getter(ins.args[0], None)
            ga = self._getter(ins.args[1], ins.ty)
            gb = self._getter(ins.args[2], ins.ty)
            return lambda env: env.__setitem__(r, ga(env) if gc(env) else gb(env))
        if op == "icmp":
            return self._icmp(ins)
        if op == "binop":
            return self._binop(ins, site)
        if op == "psub":
            ga = self._getter(ins.args[0], None)
            gb = self._getter(ins.args[1], None)
            scale = _pointee_size(ins.elem)

            def psub(env):
                d = _signed((ga(env) - gb(env)) & MASK64, 64)
                q = abs(d) // scale
                env[r] = (q if d >= 0 else -q) & MASK64
            return psub
        if op == "call":
            getters = [self._getter(a, t) for a, t in
                       zip(ins.args, self.m.function(ins.sub).type.params)]
            name = ins.sub
            res_bits = (1 << _bits(ins.ty)) - 1 if not ins.ty.is_void else 0

            def call(env):
                v = self.invoke(self.compiled(name), [g(env) for g in getters])
                if r is not None:
                    env[r] = v & res_bits
            return call
        if op == "icall":
            ft = types[ins.args[0].name] if isinstance(ins.args[0], Local) else \
                self.m.symbol_type(ins.args[0].name)
            ptys = ft.resolved().pointee.resolved().params
            gt = self._getter(ins.args[0], None)
            getters = [self._getter(a, t) for a, t in zip(ins.args[1:], ptys)]
            res_bits = (1 << _bits(ins.ty)) - 1 if not ins.ty.is_void else 0

            def icall(env):
                v = self.call_address(gt(env), [g(env) for g in getters], site)
                if r is not None:
                    env[r] = v & res_bits
            return icall
        if op == "intrinsic":
            from .intrinsics import compile_intrinsic
            return compile_intrinsic(self, ins, types, site)
        raise VMError(f"cannot execute opcode {op!r}")

    def _icmp(self, ins: Instr):
        r = ins.result
        bits = _bits(ins.elem)
        ga = self._getter(ins.args[0], ins.elem)
        gb = self._getter(ins.args[1], ins.elem)
        pred = ins.sub
        if pred in ("slt", "sle", "sgt", "sge"):
            sign, full = 1 << (bits - 1), 1 << bits
            cmp = {"slt": operator.lt, "sle": operator.le, "sgt": operator.gt,
                   "sge": operator.ge}[pred]

            def scmp(env):
                a, b = ga(env), gb(env)
                if a & sign:
                    a -= full
                if b & sign:
                    b -= full
                env[r] = 1 if cmp(a, b) else 0
            return scmp
        cmp = {"eq": operator.eq, "ne": operator.ne, "ult": operator.lt, "ule": operator.le,
               "ugt": operator.gt, "uge": operator.ge}[pred]
        return lambda env: env.__setitem__(r, 1 if cmp(ga(env), gb(env)) else 0)

    def _binop(self, ins: Instr, site: Site):
        r = ins.result
        bits = _bits(ins.ty)
        mask = (1 << bits) - 1
        sign, full = 1 << (bits - 1), 1 << bits
        ga = self._getter(ins.args[0], ins.ty)
        gb = self._getter(ins.args[1], ins.ty)
        sub = ins.sub
        simple = {"add": operator.add, "sub": operator.sub, "mul": operator.mul,
                  "and": operator.and_, "or": operator.or_, "xor": operator.xor}
        if sub in simple:
            f = simple[sub]
            return lambda env: env.__setitem__(r, f(ga(env), gb(env)) & mask)
        if sub in ("shl", "lshr", "ashr"):
            def shift(env):
                a, n = ga(env), gb(env) % bits
                if sub == "shl":
                    v = a << n
                elif sub == "lshr":
                    v = a >> n
                else:
                    v = (a - full if a & sign else a) >> n
                env[r] = v & mask
            return shift

        def div(env):
            a, b = ga(env), gb(env)
            if b == 0:
                raise VMError(f"division by zero in @{site.function} {site.iid}")
            if sub in ("udiv", "urem"):
                v = a // b if sub == "udiv" else a % b
            else:
                sa = a - full if a & sign else a
                sb = b - full if b & sign else b
                q = abs(sa) // abs(sb)
                if (sa < 0) != (sb < 0):
                    q = -q
                v = q if sub == "sdiv" else sa - q * sb
            env[r] = v & mask
        return div


def alloc_error(machine: Machine, e: AllocError, site: Site):
    if e.kind == "double-free":
        machine.abort("double-free", site, str(e), address=e.address)
    raise VMError(str(e))
