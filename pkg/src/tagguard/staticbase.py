"""Static-base identification.

Every pointer value is mapped to the value it is statically known to be derived from.
Roots (parameters, loads, call results, allocas, globals, unrelated inttoptr results) are
their own base; pointer arithmetic and casts inherit the base of their source; phi and
select results get a synthesized merge node over the bases of their operands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .mir.ir import NULL, Const, Function, GlobalRef, Instr, Local, Module, Null
from .mir.types import I8PTR, FuncType, MirType, PtrType, same_type, size_of, unit_size

SELF = "self"
BACKTRACKED = "backtracked"
INT_CORRELATED = "int-correlated"
SYNTH_PHI = "synthesized-phi"
SYNTH_SELECT = "synthesized-select"
INT_ARITH_SUSPECT = "int-arith-suspect"
PROVENANCES = (SELF, BACKTRACKED, INT_CORRELATED, SYNTH_PHI, SYNTH_SELECT, INT_ARITH_SUSPECT)


@dataclass(frozen=True)
class BaseEntry:
    base: object  # Local, GlobalRef or NULL
    provenance: str


@dataclass
class StaticBaseMap:
    entries: dict[str, BaseEntry] = field(default_factory=dict)
    # name -> MirType for every pointer value of the function (after synthesis)
    types: dict[str, MirType] = field(default_factory=dict)
    # names of inttoptr results (roots whose tag cannot be trusted)
    inttoptr: set[str] = field(default_factory=set)

    def __getitem__(self, name: str) -> BaseEntry:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def base_of(self, v):
        if isinstance(v, Local):
            return self.entries[v.name].base
        if isinstance(v, GlobalRef):
            return v
        return NULL

    def provenance(self, v) -> str:
        if isinstance(v, Local):
            return self.entries[v.name].provenance
        return SELF

    def int_derived(self, v) -> bool:
        """True when the tag of v's base cannot be trusted to locate the object."""
        if isinstance(v, Local):
            e = self.entries[v.name]
            if e.provenance in (INT_CORRELATED, INT_ARITH_SUSPECT):
                return True
            b = e.base
            return isinstance(b, Local) and b.name in self.inttoptr
        return False

    def dump(self, f: Function) -> str:
        lines = []
        for name in _pointer_values(f):
            if name in self.entries:
                e = self.entries[name]
                lines.append(f"%{name} -> {e.base} ({e.provenance})")
        return "\n".join(lines) + ("\n" if lines else "")


def _pointer_values(f: Function) -> list[str]:
    out = [p.name for p in f.params if p.ty.resolved().is_pointer]
    for _, ins in f.instructions():
        if ins.result is not None and ins.ty is not None and ins.ty.resolved().is_pointer:
            out.append(ins.result)
    return out


@dataclass
class _Synth:
    name: str
    kind: str  # "phi" or "select"
    anchor: Instr  # synthesized node is placed immediately before this instruction
    block: str
    arms: list  # base operands
    labels: list[str] = field(default_factory=list)
    cond: object = None
    origin: Instr | None = None  # pointer phi/select this node is the base of


class _Analysis:
    def __init__(self, f: Function, module: Module | None):
        self.f = f
        self.module = module
        self.defs = f.definitions()
        self.block_of = {ins.result: b.label for b, ins in f.instructions() if ins.result}
        self.params = {p.name: p for p in f.params}
        self.taken = f.value_names()
        self.map = StaticBaseMap()
        self.synth: dict[str, _Synth] = {}
        self.int_memo: dict[str, object] = {}
        self.replaced: dict[str, object] = {}

    # -- types ---------------------------------------------------------
    def type_of(self, v) -> MirType | None:
        if isinstance(v, Local):
            if v.name in self.params:
                return self.params[v.name].ty
            if v.name in self.defs:
                return self.defs[v.name].ty
            return None
        if isinstance(v, GlobalRef) and self.module is not None:
            return self.module.symbol_type(v.name)
        return None

    # -- pointer bases -------------------------------------------------
    def base(self, v):
        if isinstance(v, Local):
            return self.resolve(v.name).base
        if isinstance(v, GlobalRef):
            return v
        return NULL

    def resolve(self, name: str) -> BaseEntry:
        e = self.map.entries.get(name)
        if e is not None:
            return e
        if name in self.params:
            e = BaseEntry(Local(name), SELF)
        else:
            e = self._resolve_instr(self.defs[name])
        self.map.entries[name] = e
        return e

    def _resolve_instr(self, ins: Instr) -> BaseEntry:
        name = ins.result
        op = ins.op
        if op in ("gep", "bitcast"):
            return BaseEntry(self.base(ins.args[0]), BACKTRACKED)
        if op == "inttoptr":
            self.map.inttoptr.add(name)
            return self.correlate(ins)
        if op in ("phi", "select"):
            if ins.gen:
                return BaseEntry(Local(name), SELF)
            prior = ins.attrs.get("sb")
            if prior and isinstance(prior[0], Local) and prior[0].name in self.defs:
                kind = SYNTH_PHI if op == "phi" else SYNTH_SELECT
                return BaseEntry(prior[0], kind)
            return self._synthesize(ins)
        return BaseEntry(Local(name), SELF)

    def _placeholder(self, stem: str, kind: str, anchor: Instr, origin=None) -> _Synth:
        name = self.f.fresh_name(f"{stem}.sb", self.taken)
        s = _Synth(name, kind, anchor, self.block_of[anchor.result], [], origin=origin)
        self.synth[name] = s
        self.map.entries[name] = BaseEntry(Local(name), SELF)
        return s

    def _synthesize(self, ins: Instr) -> BaseEntry:
        kind = SYNTH_PHI if ins.op == "phi" else SYNTH_SELECT
        s = self._placeholder(ins.result, ins.op, ins, origin=ins)
        entry = BaseEntry(Local(s.name), kind)
        # pre-register so that loop-carried uses see the placeholder
        self.map.entries[ins.result] = entry
        if ins.op == "phi":
            s.labels = list(ins.labels)
            s.arms = [self.base(a) for a in ins.args]
        else:
            s.cond = ins.args[0]
            s.arms = [self.base(a) for a in ins.args[1:]]
        return entry

    # -- integer to pointer correlation ----------------------------------
    def correlate(self, ins: Instr) -> BaseEntry:
        src = ins.args[0]
        arith, trunc = self._int_flags(src)
        if trunc:
            return BaseEntry(Local(ins.result), INT_ARITH_SUSPECT)
        b = self.int_base(src)
        if b is None:
            return BaseEntry(Local(ins.result), SELF)
        return BaseEntry(b, INT_ARITH_SUSPECT if arith else INT_CORRELATED)

    def _int_flags(self, v) -> tuple[bool, bool]:
        arith = trunc = False
        seen = set()
        work = [v]
        while work:
            x = work.pop()
            if not isinstance(x, Local) or x.name in seen or x.name not in self.defs:
                continue
            seen.add(x.name)
            d = self.defs[x.name]
            if d.op == "binop":
                arith = True
                work.extend(d.args)
            elif d.op == "conv":
                trunc |= d.sub == "trunc"
                work.extend(d.args)
            elif d.op == "phi":
                work.extend(d.args)
            elif d.op == "select":
                work.extend(d.args[1:])
        return arith, trunc

    def int_base(self, v):
        """Pointer base reached by integer value v through its def chain, or None."""
        if not isinstance(v, Local) or v.name not in self.defs:
            return None
        name = v.name
        if name in self.int_memo:
            return self.int_memo[name]
        d = self.defs[name]
        if d.op == "ptrtoint":
            r = self.base(d.args[0])
        elif d.op == "conv":
            r = self.int_base(d.args[0])
        elif d.op == "binop":
            inputs = [a for a in d.args if not isinstance(a, Const)]
            if d.sub not in ("add", "sub", "and", "or", "xor") or not inputs:
                r = None
            else:
                self.int_memo[name] = None
                bases = [self.int_base(a) for a in inputs]
                if d.sub == "sub" and len(inputs) == 2:
                    bases = bases[:1]  # p - q stays in p's object
                # operands with no pointer origin are plain offsets
                known = {str(b): b for b in bases if b is not None}
                r = next(iter(known.values())) if len(known) == 1 else None
        elif d.op in ("phi", "select") and d.attrs.get("sb") \
                and isinstance(d.attrs["sb"][0], Local) and d.attrs["sb"][0].name in self.defs:
            r = d.attrs["sb"][0]
        elif d.op in ("phi", "select"):
            s = self._placeholder(name, d.op, d, origin=d)
            self.int_memo[name] = Local(s.name)
            if d.op == "phi":
                s.labels = list(d.labels)
                arms = [self.int_base(a) for a in d.args]
            else:
                s.cond = d.args[0]
                arms = [self.int_base(a) for a in d.args[1:]]
            if any(a is None for a in arms):
                # not every path comes from a pointer: give up on this node
                self._drop(s.name)
                r = None
            else:
                s.arms = arms
                r = Local(s.name)
        else:
            r = None
        self.int_memo[name] = r
        return r

    def _drop(self, name: str):
        self.synth.pop(name, None)
        self.map.entries.pop(name, None)
        self.replaced[name] = None

    # -- cleanup and materialization -------------------------------------
    def find(self, v):
        while isinstance(v, Local) and v.name in self.replaced:
            v = self.replaced[v.name]
        return v

    def simplify(self):
        changed = True
        while changed:
            changed = False
            for name, s in list(self.synth.items()):
                arms = [self.find(a) for a in s.arms]
                if any(a is None for a in arms):
                    self._drop(name)
                    changed = True
                    continue
                distinct = []
                for a in arms:
                    if a != Local(name) and a not in distinct:
                        distinct.append(a)
                if len(distinct) <= 1:
                    self.replaced[name] = distinct[0] if distinct else NULL
                    del self.synth[name]
                    self.map.entries.pop(name, None)
                    changed = True

    def synth_types(self) -> dict[str, MirType]:
        types: dict[str, MirType | None] = {n: None for n in self.synth}
        changed = True
        while changed:
            changed = False
            for n, s in self.synth.items():
                t = types[n]
                for a in s.arms:
                    a = self.find(a)
                    at = types.get(a.name) if isinstance(a, Local) and a.name in types \
                        else self.type_of(a)
                    if at is None:
                        continue
                    if t is None:
                        t = at
                    elif not same_type(t, at):
                        t = I8PTR
                if t != types[n]:
                    types[n] = t
                    changed = True
        return {n: (t if t is not None else I8PTR) for n, t in types.items()}

    def materialize(self):
        f = self.f
        types = self.synth_types()
        blocks = f.block_map()
        for name, s in self.synth.items():
            ty = types[name]
            arms = []
            for i, a in enumerate(self.find(x) for x in s.arms):
                at = types.get(a.name) if isinstance(a, Local) and a.name in types \
                    else self.type_of(a)
                if isinstance(a, Null) or at is None or same_type(at, ty):
                    arms.append(a)
                    continue
                cname = f.fresh_name(f"{name}.c", self.taken)
                cast = Instr("bitcast", cname, ty, [a], attrs={"gen": ()})
                if s.kind == "phi":
                    pred = blocks[s.labels[i]]
                    pred.instrs.insert(len(pred.instrs) - 1, cast)
                else:
                    blk = blocks[s.block]
                    blk.instrs.insert(blk.instrs.index(s.anchor), cast)
                self.map.entries[cname] = BaseEntry(a, BACKTRACKED)
                self.map.types[cname] = ty
                arms.append(Local(cname))
            if s.kind == "phi":
                node = Instr("phi", name, ty, arms, labels=list(s.labels), attrs={"gen": ()})
            else:
                node = Instr("select", name, ty, [s.cond] + arms, attrs={"gen": ()})
            blk = blocks[s.block]
            blk.instrs.insert(blk.instrs.index(s.anchor), node)
            if s.origin is not None:
                s.origin.attrs["sb"] = (Local(name),)
            self.map.types[name] = ty

    def finish(self):
        for name, e in list(self.map.entries.items()):
            b = self.find(e.base)
            if b is None:
                b = Local(name)
                e = BaseEntry(b, SELF)
            elif b != e.base:
                # a synthesized merge collapsed into one of its inputs
                prov = BACKTRACKED if e.provenance in (SYNTH_PHI, SYNTH_SELECT) else e.provenance
                e = BaseEntry(b, prov)
            self.map.entries[name] = e
        for name in _pointer_values(self.f):
            if name not in self.map.types:
                self.map.types[name] = self.type_of(Local(name))


def compute_static_bases(f: Function, module: Module | None = None
                         ) -> tuple[StaticBaseMap, Function]:
    """Map every pointer value of `f` to its static base, inserting merge nodes into `f`."""
    a = _Analysis(f, module)
    for name in _pointer_values(f):
        a.resolve(name)
    a.simplify()
    a.materialize()
    a.finish()
    return a.map, f


def constant_displacement(f_defs: dict[str, Instr], v) -> int | None:
    """Byte offset of v from its static base when it is a compile-time constant."""
    disp = 0
    while isinstance(v, Local):
        d = f_defs.get(v.name)
        if d is None:
            return disp
        if d.op == "inttoptr" or (d.op in ("phi", "select") and not d.gen):
            return None
        if d.op not in ("gep", "bitcast"):
            return disp
        if d.op == "gep":
            idx = d.args[1]
            if not isinstance(idx, Const):
                return None
            disp += idx.value * size_of(d.elem)
        v = d.args[0]
    return disp


def pointee_size(t: MirType | None) -> int | None:
    """Bytes a pointer of type `t` is guaranteed to reach: one element of its pointee."""
    if t is None:
        return None
    t = t.resolved()
    if not isinstance(t, PtrType):
        return None
    p = t.pointee.resolved()
    if p.is_void or isinstance(p, FuncType):
        return None
    return unit_size(p)
