"""MIR type system and the layout engine shared by every pass and the VM."""

from __future__ import annotations

from dataclasses import dataclass, field

POINTER_SIZE = 8


class MirType:
    __slots__ = ()

    @property
    def is_int(self) -> bool:
        return isinstance(self, IntType)

    @property
    def is_pointer(self) -> bool:
        return isinstance(self, PtrType)

    @property
    def is_void(self) -> bool:
        return isinstance(self, VoidType)

    def resolved(self) -> MirType:
        return self


@dataclass(frozen=True)
class IntType(MirType):
    width: int

    def __post_init__(self):
        if self.width not in (8, 16, 32, 64):
            raise ValueError(f"unsupported integer width {self.width}")

    def __str__(self):
        return f"i{self.width}"


@dataclass(frozen=True)
class PtrType(MirType):
    pointee: MirType

    def __str__(self):
        if isinstance(self.pointee, FuncType):
            return f"({self.pointee})*"
        return f"{self.pointee}*"


@dataclass(frozen=True)
class ArrayType(MirType):
    count: int
    elem: MirType

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("array count must be non-negative")

    def __str__(self):
        return f"[{self.count} x {self.elem}]"


@dataclass(frozen=True)
class StructType(MirType):
    fields: tuple[MirType, ...]

    def __str__(self):
        return "{" + ", ".join(str(f) for f in self.fields) + "}"


@dataclass(frozen=True)
class FuncType(MirType):
    params: tuple[MirType, ...]
    ret: MirType

    def __str__(self):
        return "fn(" + ", ".join(str(p) for p in self.params) + f") -> {self.ret}"


@dataclass(frozen=True)
class VoidType(MirType):
    def __str__(self):
        return "void"


@dataclass(frozen=True, eq=False)
class NamedType(MirType):
    """A module-level type alias (`type $name = ...`); allows recursion through pointers."""

    name: str
    body: list = field(default_factory=list, compare=False, repr=False)

    def __eq__(self, other):
        return isinstance(other, NamedType) and other.name == self.name

    def __hash__(self):
        return hash(("named", self.name))

    def resolved(self) -> MirType:
        t: MirType = self
        seen = set()
        while isinstance(t, NamedType):
            if t.name in seen or not t.body:
                raise TypeError(f"unresolved type ${t.name}")
            seen.add(t.name)
            t = t.body[0]
        return t

    def __str__(self):
        return f"${self.name}"


I8, I16, I32, I64 = IntType(8), IntType(16), IntType(32), IntType(64)
VOID = VoidType()
I8PTR = PtrType(I8)


def ptr(t: MirType) -> PtrType:
    return PtrType(t)


def align_of(t: MirType) -> int:
    t = t.resolved()
    if isinstance(t, IntType):
        return t.width // 8
    if isinstance(t, PtrType):
        return POINTER_SIZE
    if isinstance(t, ArrayType):
        return align_of(t.elem)
    if isinstance(t, StructType):
        return max((align_of(f) for f in t.fields), default=1)
    raise TypeError(f"type {t} has no alignment")


def _round_up(n: int, a: int) -> int:
    return (n + a - 1) // a * a


def struct_offsets(t: StructType) -> list[int]:
    offs = []
    pos = 0
    for f in t.fields:
        pos = _round_up(pos, align_of(f))
        offs.append(pos)
        pos += size_of(f)
    return offs


def size_of(t: MirType) -> int:
    t = t.resolved()
    if isinstance(t, IntType):
        return t.width // 8
    if isinstance(t, PtrType):
        return POINTER_SIZE
    if isinstance(t, ArrayType):
        return t.count * size_of(t.elem)
    if isinstance(t, StructType):
        if not t.fields:
            return 0
        last = struct_offsets(t)[-1] + size_of(t.fields[-1])
        return _round_up(last, align_of(t))
    raise TypeError(f"type {t} is unsized")


def is_sized(t: MirType) -> bool:
    try:
        size_of(t)
    except (TypeError, RecursionError):
        return False
    return True


def element_size(t: MirType) -> int | None:
    """Size of the pointee of a pointer type, or None if the pointee is unsized."""
    t = t.resolved()
    if not isinstance(t, PtrType):
        raise TypeError(f"{t} is not a pointer type")
    p = t.pointee.resolved()
    if isinstance(p, (FuncType, VoidType)):
        return None
    return size_of(p)


def unit_size(t: MirType) -> int:
    """Bytes of one element of `t`: the element size for arrays, the full size otherwise."""
    t = t.resolved()
    if isinstance(t, ArrayType):
        return size_of(t.elem)
    return size_of(t)


def pointer_offsets(t: MirType, base: int = 0) -> list[int]:
    """Byte offsets of every pointer-typed slot inside an object of type `t`."""
    t = t.resolved()
    if isinstance(t, PtrType):
        return [base]
    if isinstance(t, ArrayType):
        inner = pointer_offsets(t.elem)
        if not inner:
            return []
        step = size_of(t.elem)
        return [base + i * step + o for i in range(t.count) for o in inner]
    if isinstance(t, StructType):
        out = []
        for f, o in zip(t.fields, struct_offsets(t)):
            out.extend(pointer_offsets(f, base + o))
        return out
    return []


def same_type(a: MirType, b: MirType) -> bool:
    return a == b or a.resolved() == b.resolved()
