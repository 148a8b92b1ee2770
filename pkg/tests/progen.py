"""Random generator of safe, pointer-heavy MIR programs.

Programs allocate i32 arrays on the stack, heap, global segment and anonymous
mappings, then pass interior pointers around: through calls, returns, struct fields,
global slots, phis, indirect calls and library copies. Every index is derived from the
object's known length, so each program is free of out-of-bounds accesses for every
value of its single argument `%s`, which only steers branches and data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

PRELUDE = """\
type $pair = {i32*, i64}

global @slot : i32* = null
global @fp : (fn(i32*, i64) -> i64)* = @sum

func @fill(%p: i32*, %n: i64, %seed: i32) -> void {
entry:
  %g = icmp sgt i64 %n, 0
  condbr %g, pre, out
pre:
  br head
head:
  %i = phi i64 [0, pre], [%i2, body]
  %c = icmp slt i64 %i, %n
  condbr %c, body, out
body:
  %q = gep i32, %p, %i
  %t = trunc i64 %i to i32
  %v = mul i32 %t, %seed
  %w = xor i32 %v, 21
  store i32 %w, %q
  %i2 = add i64 %i, 1
  br head
out:
  ret void
}

func @sum(%p: i32*, %n: i64) -> i64 {
entry:
  %g = icmp sgt i64 %n, 0
  condbr %g, pre, out
pre:
  br head
head:
  %i = phi i64 [0, pre], [%i2, body]
  %acc = phi i64 [0, pre], [%acc2, body]
  %c = icmp slt i64 %i, %n
  condbr %c, body, done
body:
  %q = gep i32, %p, %i
  %v = load i32, %q
  %w = sext i32 %v to i64
  %acc2 = add i64 %acc, %w
  %i2 = add i64 %i, 1
  br head
done:
  ret %acc
out:
  ret 0
}

func @mid(%p: i32*, %off: i64) -> i32* {
entry:
  %q = gep i32, %p, %off
  ret %q
}

func @pick(%a: i32*, %b: i32*, %f: i32) -> i32* {
entry:
  %c = icmp ne i32 %f, 0
  %r = select i32* %c, %a, %b
  ret %r
}
"""


@dataclass
class Obj:
    ptr: str  # i32* value naming the object's first element
    n: int  # length in i32 elements
    heap: bool = False

    @property
    def span(self) -> int:
        """Elements walked by loops; big objects are only touched at a prefix."""
        return min(self.n, 48)


@dataclass
class _Gen:
    rng: random.Random
    lines: list[str] = field(default_factory=list)
    globals_: list[str] = field(default_factory=list)
    objs: list[Obj] = field(default_factory=list)
    k: int = 0
    label: str = "entry"

    def fresh(self, stem: str) -> str:
        self.k += 1
        return f"%{stem}{self.k}"

    def emit(self, s: str) -> None:
        self.lines.append("  " + s)

    def start_block(self, label: str) -> None:
        self.lines.append(f"{label}:")
        self.label = label

    def length(self) -> int:
        r = self.rng.random()
        if r < 0.1:
            return self.rng.randint(8200, 9000)  # beyond the small-object limit
        return self.rng.randint(1, 40) if r < 0.8 else self.rng.randint(41, 600)

    # -- objects ------------------------------------------------------------
    def new_object(self) -> None:
        n = self.length()
        kind = self.rng.choice(["stack", "heap", "global", "mmap"])
        p = self.fresh("o")
        if kind == "stack":
            a = self.fresh("a")
            self.emit(f"{a} = alloca [{n} x i32]")
            self.emit(f"{p} = bitcast {a} to i32*")
        elif kind == "global":
            g = f"@g{len(self.globals_)}"
            self.globals_.append(f"global {g} : [{n} x i32]")
            self.emit(f"{p} = bitcast {g} to i32*")
        else:
            raw = self.fresh("m")
            fn = "malloc" if kind == "heap" else "mmap_anon"
            self.emit(f"{raw} = intrinsic i8* {fn}({4 * n})")
            self.emit(f"{p} = bitcast {raw} to i32*")
        self.objs.append(Obj(p, n, kind == "heap"))
        self.emit(f"call void @fill({p}, {min(n, 48)}, {self.rng.randint(1, 9)})")

    def obj(self) -> Obj:
        return self.rng.choice(self.objs)

    def index(self, o: Obj) -> int:
        return self.rng.randrange(o.n)

    def print(self, v: str) -> None:
        self.emit(f"intrinsic void print({v})")

    # -- operations ---------------------------------------------------------
    def op_const_access(self) -> None:
        o = self.obj()
        i = self.index(o)
        q, v = self.fresh("q"), self.fresh("v")
        self.emit(f"{q} = gep i32, {o.ptr}, {i}")
        self.emit(f"store i32 {self.rng.randint(-50, 50)}, {q}")
        self.emit(f"{v} = load i32, {q}")
        self.print(v)

    def op_interior_call(self) -> None:
        o = self.obj()
        off = self.index(o)
        q, s = self.fresh("q"), self.fresh("s")
        self.emit(f"{q} = call i32* @mid({o.ptr}, {off})")
        self.emit(f"{s} = call i64 @sum({q}, {min(o.n - off, 48)})")
        self.print(s)
        if off + 1 < o.n:
            d = self.rng.randrange(o.n - off)
            r, v = self.fresh("r"), self.fresh("v")
            self.emit(f"{r} = gep i32, {q}, {d}")
            self.emit(f"{v} = load i32, {r}")
            self.print(v)

    def op_struct_field(self) -> None:
        o = self.obj()
        off = self.index(o)
        pr, f0, raw, f1b, f1, q, back, n2, v = (self.fresh(s) for s in (
            "pr", "f0", "raw", "f1b", "f1", "q", "back", "n", "v"))
        self.emit(f"{pr} = alloca $pair")
        self.emit(f"{q} = gep i32, {o.ptr}, {off}")
        self.emit(f"{f0} = bitcast {pr} to i32**")
        self.emit(f"store i32* {q}, {f0}")
        self.emit(f"{raw} = bitcast {pr} to i8*")
        self.emit(f"{f1b} = gep i8, {raw}, 8")
        self.emit(f"{f1} = bitcast {f1b} to i64*")
        self.emit(f"store i64 {min(o.n - off, 48)}, {f1}")
        self.emit(f"{back} = load i32*, {f0}")
        self.emit(f"{n2} = load i64, {f1}")
        self.emit(f"{v} = call i64 @sum({back}, {n2})")
        self.print(v)

    def op_global_slot(self) -> None:
        o = self.obj()
        off = self.index(o)
        q, back, v = self.fresh("q"), self.fresh("back"), self.fresh("v")
        self.emit(f"{q} = gep i32, {o.ptr}, {off}")
        self.emit(f"store i32* {q}, @slot")
        self.emit(f"{back} = load i32*, @slot")
        self.emit(f"{v} = load i32, {back}")
        self.print(v)

    def op_compare(self) -> None:
        o = self.obj()
        a, b = self.rng.randint(0, o.n), self.rng.randint(0, o.n)  # one-past-end is fine
        pa, pb, c, d, e, z = (self.fresh(s) for s in ("pa", "pb", "c", "d", "e", "z"))
        pred = self.rng.choice(["eq", "ne", "ult", "ule", "ugt", "uge"])
        self.emit(f"{pa} = gep i32, {o.ptr}, {a}")
        self.emit(f"{pb} = gep i32, {o.ptr}, {b}")
        self.emit(f"{c} = icmp {pred} i32* {pa}, {pb}")
        self.emit(f"{z} = select i32 {c}, 1, 0")
        self.print(z)
        self.emit(f"{d} = psub i32* {pb}, {pa}")
        self.print(d)
        self.emit(f"{e} = icmp eq i32* {pa}, null")
        self.emit(f"{z}b = select i32 {e}, 7, 8")
        self.print(f"{z}b")

    def op_merge(self) -> None:
        o1, o2 = self.obj(), self.obj()
        i = self.rng.randrange(min(o1.n, o2.n))
        t = self.rng.randint(-3, 3)
        c, l1, l2, j = self.fresh("c"), f"l{self.k}a", f"l{self.k}b", f"l{self.k}j"
        self.emit(f"{c} = icmp slt i64 %s, {t}")
        self.emit(f"condbr {c}, {l1}, {l2}")
        q1, q2, m, v = self.fresh("q"), self.fresh("q"), self.fresh("mg"), self.fresh("v")
        self.start_block(l1)
        self.emit(f"{q1} = gep i32, {o1.ptr}, {i}")
        self.emit(f"br {j}")
        self.start_block(l2)
        self.emit(f"{q2} = gep i32, {o2.ptr}, {i}")
        self.emit(f"br {j}")
        self.start_block(j)
        self.emit(f"{m} = phi i32* [{q1}, {l1}], [{q2}, {l2}]")
        self.emit(f"{v} = load i32, {m}")
        self.print(v)

    def op_select(self) -> None:
        o1, o2 = self.obj(), self.obj()
        i = self.rng.randrange(min(o1.n, o2.n))
        c, r, q, v = self.fresh("c"), self.fresh("r"), self.fresh("q"), self.fresh("v")
        self.emit(f"{c} = icmp sgt i64 %s, {self.rng.randint(-3, 3)}")
        self.emit(f"{c}f = select i32 {c}, 1, 0")
        self.emit(f"{r} = call i32* @pick({o1.ptr}, {o2.ptr}, {c}f)")
        self.emit(f"{q} = gep i32, {r}, {i}")
        self.emit(f"store i32 %sx, {q}")
        self.emit(f"{v} = load i32, {q}")
        self.print(v)

    def op_indirect(self) -> None:
        o = self.obj()
        f, v = self.fresh("f"), self.fresh("v")
        self.emit(f"{f} = load (fn(i32*, i64) -> i64)*, @fp")
        self.emit(f"{v} = icall i64 {f}({o.ptr}, {o.span})")
        self.print(v)

    def op_copy(self) -> None:
        o1, o2 = self.obj(), self.obj()
        if o1.ptr == o2.ptr:
            return
        n = self.rng.randint(1, min(o1.span, o2.span))
        d, s, r, v = self.fresh("d"), self.fresh("sp"), self.fresh("r"), self.fresh("v")
        self.emit(f"{d} = bitcast {o1.ptr} to i8*")
        self.emit(f"{s} = bitcast {o2.ptr} to i8*")
        self.emit(f"{r} = intrinsic i8* memcpy({d}, {s}, {4 * n})")
        self.emit(f"{v} = call i64 @sum({o1.ptr}, {n})")
        self.print(v)

    def op_int_roundtrip(self) -> None:
        o = self.obj()
        i = self.index(o)
        a, b, p, v = self.fresh("ia"), self.fresh("ib"), self.fresh("p"), self.fresh("v")
        self.emit(f"{a} = ptrtoint {o.ptr} to i64")
        self.emit(f"{b} = add i64 {a}, {4 * i}")
        self.emit(f"{p} = inttoptr {b} to i32*")
        self.emit(f"{v} = load i32, {p}")
        self.print(v)

    OPS = ("op_const_access", "op_interior_call", "op_struct_field", "op_global_slot",
           "op_compare", "op_merge", "op_select", "op_indirect", "op_copy", "op_int_roundtrip")

    def op_overflow(self) -> None:
        o = self.obj()
        q = self.fresh("q")
        self.emit(f"{q} = gep i32, {o.ptr}, {o.n}")
        self.emit(f"store i32 1, {q}")

    def build(self, overflow: bool = False) -> str:
        self.emit("%sx = trunc i64 %s to i32")
        for _ in range(self.rng.randint(1, 4)):
            self.new_object()
        for _ in range(self.rng.randint(4, 14)):
            if self.rng.random() < 0.15:
                self.new_object()
            getattr(self, self.rng.choice(self.OPS))()
        if overflow:
            self.op_overflow()
        for o in self.objs:
            if o.heap:
                self.emit(f"intrinsic void free({o.ptr})")
        self.emit("ret 0")
        body = "\n".join(self.lines)
        g = "\n".join(self.globals_)
        return f"{g}\n\n{PRELUDE}\nfunc @main(%s: i64) -> i32 {{\nentry:\n{body}\n}}\n"


def generate(seed: int) -> str:
    """MIR source of one safe program; deterministic in `seed`."""
    return _Gen(random.Random(seed)).build()


def generate_overflowing(seed: int) -> str:
    """Like `generate`, plus one final store one element past the end of an object."""
    return _Gen(random.Random(seed)).build(overflow=True)


def arguments(seed: int) -> list[list[int]]:
    """Argument vectors that drive both sides of every branch on `%s`."""
    return [[-5], [0], [seed % 7]]
