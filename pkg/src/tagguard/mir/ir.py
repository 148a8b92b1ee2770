"""In-memory SSA representation of MIR programs."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator, Union

from .types import FuncType, MirType, PtrType


@dataclass(frozen=True)
class Local:
    name: str

    def __str__(self):
        return f"%{self.name}"


@dataclass(frozen=True)
class GlobalRef:
    """`@name`: a global variable or the address of a function."""

    name: str

    def __str__(self):
        return f"@{self.name}"


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Null:
    def __str__(self):
        return "null"


NULL = Null()
Operand = Union[Local, GlobalRef, Const, Null]

TERMINATORS = frozenset({"br", "condbr", "ret"})
BINOPS = frozenset({"add", "sub", "mul", "sdiv", "udiv", "srem", "urem",
                    "and", "or", "xor", "shl", "lshr", "ashr"})
CONVS = frozenset({"zext", "sext", "trunc"})
ICMP_PREDS = frozenset({"eq", "ne", "ult", "ule", "ugt", "uge", "slt", "sle", "sgt", "sge"})
OPCODES = frozenset({"alloca", "gep", "load", "store", "bitcast", "ptrtoint", "inttoptr",
                     "phi", "select", "icmp", "binop", "conv", "psub", "br", "condbr",
                     "call", "icall", "ret", "intrinsic"})


@dataclass
class Instr:
    """One MIR instruction.

    Field usage by opcode:
      alloca     elem=allocated type, ty=elem*
      gep        elem=element type, args=[base, index], ty=elem*
      load       ty=loaded type, args=[ptr]
      store      ty=stored type, args=[value, ptr]
      bitcast/ptrtoint/inttoptr/conv    args=[value], ty=target type (conv: elem=source type)
      phi        args=incoming values, labels=incoming blocks
      select     args=[cond, a, b]
      icmp       sub=predicate, elem=operand type, ty=i8
      binop      sub=operation
      psub       elem=operand pointer type, ty=i64
      br/condbr  labels=targets (condbr args=[cond])
      call       sub=callee, ty=return type
      icall      args=[callee, *args]
      ret        args=[] or [value], ty=value type
      intrinsic  sub=intrinsic name, ty=return type
    """

    op: str
    result: str | None = None
    ty: MirType | None = None
    args: list = field(default_factory=list)
    sub: str | None = None
    elem: MirType | None = None
    labels: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)
    loc: str | None = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)
    iid: str | None = None

    @property
    def gen(self) -> bool:
        return "gen" in self.attrs

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    def uses(self) -> Iterator[str]:
        for a in self.args:
            if isinstance(a, Local):
                yield a.name
        rec = self.attrs.get("recover")
        if rec:
            yield rec[0].name

    def replace_uses(self, mapping: dict[str, Operand]) -> None:
        self.args = [mapping.get(a.name, a) if isinstance(a, Local) else a for a in self.args]


@dataclass
class Block:
    label: str
    instrs: list[Instr] = field(default_factory=list)

    @property
    def terminator(self) -> Instr | None:
        if self.instrs and self.instrs[-1].is_terminator:
            return self.instrs[-1]
        return None

    def successors(self) -> list[str]:
        t = self.terminator
        return list(t.labels) if t is not None and t.op != "ret" else []

    def phis(self) -> list[Instr]:
        out = []
        for ins in self.instrs:
            if ins.op != "phi":
                break
            out.append(ins)
        return out


@dataclass
class Param:
    name: str
    ty: MirType


@dataclass
class Function:
    name: str
    params: list[Param]
    ret: MirType
    blocks: list[Block] = field(default_factory=list)
    line: int = field(default=0, compare=False)

    @property
    def type(self) -> FuncType:
        return FuncType(tuple(p.ty for p in self.params), self.ret)

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def block_map(self) -> dict[str, Block]:
        return {b.label: b for b in self.blocks}

    def instructions(self) -> Iterator[tuple[Block, Instr]]:
        for b in self.blocks:
            for ins in b.instrs:
                yield b, ins

    def definitions(self) -> dict[str, Instr]:
        return {ins.result: ins for _, ins in self.instructions() if ins.result is not None}

    def value_names(self) -> set[str]:
        names = {p.name for p in self.params}
        names.update(self.definitions())
        return names

    def fresh_name(self, stem: str, taken: set[str] | None = None) -> str:
        taken = self.value_names() if taken is None else taken
        if stem not in taken:
            taken.add(stem)
            return stem
        i = 1
        while f"{stem}.{i}" in taken:
            i += 1
        name = f"{stem}.{i}"
        taken.add(name)
        return name

    def fresh_label(self, stem: str) -> str:
        labels = {b.label for b in self.blocks}
        if stem not in labels:
            return stem
        i = 1
        while f"{stem}.{i}" in labels:
            i += 1
        return f"{stem}.{i}"


@dataclass
class Global:
    """A global variable. The value `@name` has type `ty*`.

    `init` is None (zero-initialised), an int, NULL, a (GlobalRef, byte offset) pair,
    bytes for a string literal, or a list of nested initializers for aggregates.
    """

    name: str
    ty: MirType
    init: object = None
    attrs: dict = field(default_factory=dict)
    line: int = field(default=0, compare=False)


@dataclass
class Module:
    globals: list[Global] = field(default_factory=list)
    functions: list[Function] = field(default_factory=list)
    types: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)

    def function(self, name: str) -> Function | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def global_(self, name: str) -> Global | None:
        for g in self.globals:
            if g.name == name:
                return g
        return None

    def symbol_type(self, name: str) -> MirType | None:
        """Type of the value `@name`."""
        g = self.global_(name)
        if g is not None:
            return PtrType(g.ty)
        f = self.function(name)
        if f is not None:
            return PtrType(f.type)
        return None

    @property
    def checked(self) -> bool:
        return "checked" in self.attrs

    def clone(self) -> Module:
        return copy.deepcopy(self)


def assign_iids(f: Function) -> None:
    """Give each non-generated instruction lacking an id its positional id `block.k`."""
    for b in f.blocks:
        k = 0
        for ins in b.instrs:
            if ins.gen:
                continue
            if ins.iid is None:
                ins.iid = f"{b.label}.{k}"
            k += 1


def positional_iids(f: Function) -> dict[int, str]:
    out = {}
    for b in f.blocks:
        k = 0
        for ins in b.instrs:
            if ins.gen:
                continue
            out[id(ins)] = f"{b.label}.{k}"
            k += 1
    return out
