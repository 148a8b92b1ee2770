"""Hoisting of per-iteration bounds checks out of counted loops.

A check is moved to the loop preheader when

* the access runs on every iteration (its block dominates the latch and the loop
  can only be left through the header's condition),
* its address is `gep T, %base, idx` with `%base` loop-invariant and `idx` a
  monotone function of the induction variable and loop invariants,
* the induction variable starts at an invariant value, moves by a constant step and
  is compared against an invariant bound,
* a dominating branch tests the same bounds, so the loop body runs at least once.

The hoisted check covers [address of the first access, one past the last access) and
is followed by a guard that aborts when that range is empty, which can only happen
when the index arithmetic wrapped.
"""

from __future__ import annotations

from dataclasses import dataclass

from .mir.cfg import CFG, Loop, natural_loops
from .mir.ir import Block, Const, Function, Instr, Local, Module
from .mir.types import I8, I8PTR, I64, VOID, MirType, PtrType

_FORWARD = frozenset({"slt", "sle", "ult", "ule"})
_BACKWARD = frozenset({"sgt", "sge", "ugt", "uge"})
# predicate -> the equivalent predicate with its operands swapped
_SWAP = {"slt": "sgt", "sle": "sge", "ult": "ugt", "ule": "uge",
         "sgt": "slt", "sge": "sle", "ugt": "ult", "uge": "ule"}


@dataclass
class LoopCheckCandidate:
    loop: str  # header label
    check: Instr  # the in-loop bounds_check
    access_block: str
    iv: str
    lower: object  # initial value of the induction variable
    upper: object  # loop bound
    step: int
    pred: str
    guard: str  # block whose condition proves the loop runs at least once
    base_ptr: object  # loop-invariant gep base
    elem: MirType
    index: object  # gep index operand
    chain: list[Instr]  # instructions computing index from the iv, in order
    width: int


@dataclass
class _Counted:
    header: str
    iv: Instr
    lower: object
    upper: object
    step: int
    pred: str
    outside_pred: str
    latch: str
    guard: str


class _LoopAnalysis:
    def __init__(self, m: Module, f: Function, negative_step: bool):
        self.m = m
        self.f = f
        self.negative = negative_step
        self.cfg = CFG(f)
        self.blocks = f.block_map()
        self.defs: dict[str, Instr] = {}
        self.block_of: dict[str, str] = {}
        for b in f.blocks:
            for ins in b.instrs:
                if ins.result is not None:
                    self.defs[ins.result] = ins
                    self.block_of[ins.result] = b.label

    def invariant(self, v, loop: Loop) -> bool:
        if isinstance(v, Local):
            return self.block_of.get(v.name) not in loop.blocks
        return True

    # -- loop shape ----------------------------------------------------
    def counted(self, loop: Loop) -> _Counted | None:
        cfg = self.cfg
        if len(loop.latches) != 1:
            return None
        h = self.blocks[loop.header]
        term = h.terminator
        if term is None or term.op != "condbr":
            return None
        inside, outside = term.labels
        if inside not in loop.blocks or outside in loop.blocks:
            return None
        if cfg.exits(loop.blocks) != [(loop.header, outside)]:
            return None
        for lab in loop.blocks:
            for ins in self.blocks[lab].instrs:
                if ins.op in ("ret", "call", "icall") or (
                        ins.op == "intrinsic" and ins.sub in ("exit", "qsort", "qsort_chk")):
                    return None
        cond = term.args[0]
        ci = self.defs.get(cond.name) if isinstance(cond, Local) else None
        if ci is None or ci.op != "icmp":
            return None
        pred, (a, b) = ci.sub, ci.args
        if not self.invariant(b, loop) and self.invariant(a, loop):
            a, b, pred = b, a, _SWAP.get(pred, pred)
        if not isinstance(a, Local) or not self.invariant(b, loop):
            return None
        iv = self.defs.get(a.name)
        if iv is None or iv.op != "phi" or self.block_of[a.name] != loop.header:
            return None
        outs = [p for p in cfg.preds[loop.header] if p not in loop.blocks]
        if len(outs) != 1 or len(iv.args) != 2:
            return None
        latch = loop.latches[0]
        incoming = dict(zip(iv.labels, iv.args))
        lower, nxt = incoming.get(outs[0]), incoming.get(latch)
        if lower is None or nxt is None or not self.invariant(lower, loop):
            return None
        step = self._step(nxt, iv.result)
        if step is None or step == 0:
            return None
        if pred in _FORWARD:
            if step < 0:
                return None
        elif pred in _BACKWARD:
            if step > 0 or not self.negative:
                return None
        else:
            return None
        guard = self._guard(loop, outs[0], pred, lower, b)
        if guard is None:
            return None
        return _Counted(loop.header, iv, lower, b, step, pred, outs[0], latch, guard)

    def _step(self, v, iv: str) -> int | None:
        d = self.defs.get(v.name) if isinstance(v, Local) else None
        if d is None or d.op != "binop":
            return None
        x, y = d.args
        if d.sub == "add":
            if x == Local(iv) and isinstance(y, Const):
                return y.value
            if y == Local(iv) and isinstance(x, Const):
                return x.value
        if d.sub == "sub" and x == Local(iv) and isinstance(y, Const):
            return -y.value
        return None

    def _guard(self, loop: Loop, entry: str, pred: str, lower, upper) -> str | None:
        """A block ending in `condbr (lower pred upper), T, F` such that the loop can only
        be entered through T."""
        cfg = self.cfg
        for lab in self.blocks:
            if lab in loop.blocks or lab not in cfg.reachable:
                continue
            t = self.blocks[lab].terminator
            if t is None or t.op != "condbr" or not isinstance(t.args[0], Local):
                continue
            g = self.defs.get(t.args[0].name)
            if g is None or g.op != "icmp":
                continue
            same = (g.sub == pred and g.args == [lower, upper]) or \
                   (g.sub == _SWAP.get(pred) and g.args == [upper, lower])
            if not same:
                continue
            taken, other = t.labels
            if taken == other or cfg.preds[taken] != [lab]:
                continue
            if cfg.dominates(taken, entry):
                return lab
        return None

    # -- candidates ----------------------------------------------------
    def candidates(self, loop: Loop, c: _Counted, inner: set[str]) -> list[LoopCheckCandidate]:
        out = []
        for lab in sorted(loop.blocks):
            if lab in inner or not self.cfg.dominates(lab, c.latch):
                continue
            for ins in self.blocks[lab].instrs:
                if ins.op == "intrinsic" and ins.sub == "bounds_check" and "site" in ins.attrs:
                    cand = self._candidate(loop, c, lab, ins)
                    if cand is not None:
                        out.append(cand)
        return out

    def _candidate(self, loop: Loop, c: _Counted, lab: str, chk: Instr):
        b, cp, ce, lim = chk.args
        cdef = self.defs.get(cp.name) if isinstance(cp, Local) else None
        edef = self.defs.get(ce.name) if isinstance(ce, Local) else None
        if cdef is None or edef is None or cdef.sub != "reset_tag":
            return None
        if edef.op != "gep" or edef.args[0] != cp or not isinstance(edef.args[1], Const):
            return None
        p = cdef.args[0]
        g = self.defs.get(p.name) if isinstance(p, Local) else None
        if g is None or g.op != "gep" or self.block_of[p.name] not in loop.blocks:
            return None
        if not self.invariant(g.args[0], loop):
            return None
        bdef = self.defs.get(b.name) if isinstance(b, Local) else None
        if bdef is None or bdef.sub not in ("get_base", "get_base_alloc"):
            return None
        if not self.invariant(bdef.args[0], loop):
            return None
        chain = self._chain(g.args[1], c.iv.result, loop)
        if chain is None:
            return None
        return LoopCheckCandidate(loop.header, chk, lab, c.iv.result, c.lower, c.upper, c.step,
                                  c.pred, c.guard, g.args[0], g.elem, g.args[1], chain,
                                  edef.args[1].value)

    def _chain(self, v, iv: str, loop: Loop) -> list[Instr] | None:
        """Instructions computing v from iv, or None unless v is monotone increasing in iv."""
        if v == Local(iv):
            return []
        if not isinstance(v, Local):
            return None
        d = self.defs.get(v.name)
        if d is None or self.block_of[v.name] not in loop.blocks:
            return None
        if d.op == "conv" and d.sub in ("sext", "zext"):
            inner = self._chain(d.args[0], iv, loop)
            return None if inner is None else inner + [d]
        if d.op != "binop":
            return None
        x, y = d.args
        if d.sub == "add":
            if self.invariant(y, loop):
                src = x
            elif self.invariant(x, loop):
                src = y
            else:
                return None
        elif d.sub == "sub" and self.invariant(y, loop):
            src = x
        elif d.sub in ("mul", "shl") and isinstance(y, Const) and y.value >= (
                1 if d.sub == "mul" else 0):
            src = x
        elif d.sub == "mul" and isinstance(x, Const) and x.value >= 1:
            src = y
        else:
            return None
        inner = self._chain(src, iv, loop)
        return None if inner is None else inner + [d]


class _Emitter:
    def __init__(self, f: Function, rw):
        self.f = f
        self.rw = rw
        self.out: list[Instr] = []

    def emit(self, op, stem, ty, args, **kw) -> Local | None:
        from .instrument import _gen
        name = self.rw.fresh(stem) if stem else None
        ins = _gen(op, name, ty, args, **kw)
        self.rw.define(ins)
        self.out.append(ins)
        return Local(name) if name else None


def _widen(e: _Emitter, v, ty: MirType, signed: bool):
    if ty == I64 or isinstance(v, Const):
        return v
    return e.emit("conv", "hoist.w", I64, [v], sub="sext" if signed else "zext", elem=ty)


def _last_value(e: _Emitter, c: LoopCheckCandidate, ty: MirType):
    """Value of the induction variable on the final iteration."""
    signed = c.pred.startswith("s")
    div = "sdiv" if signed else "udiv"
    lo = _widen(e, c.lower, ty, signed)
    hi = _widen(e, c.upper, ty, signed)
    if c.step > 0:
        span = e.emit("binop", "hoist.span", I64, [hi, lo], sub="sub")
        if c.pred in ("slt", "ult"):
            span = e.emit("binop", "hoist.span", I64, [span, Const(1)], sub="sub")
        n = e.emit("binop", "hoist.trips", I64, [span, Const(c.step)], sub=div)
        d = e.emit("binop", "hoist.dist", I64, [n, Const(c.step)], sub="mul")
        last = e.emit("binop", "hoist.last", I64, [lo, d], sub="add")
    else:
        span = e.emit("binop", "hoist.span", I64, [lo, hi], sub="sub")
        if c.pred in ("sgt", "ugt"):
            span = e.emit("binop", "hoist.span", I64, [span, Const(1)], sub="sub")
        n = e.emit("binop", "hoist.trips", I64, [span, Const(-c.step)], sub=div)
        d = e.emit("binop", "hoist.dist", I64, [n, Const(-c.step)], sub="mul")
        last = e.emit("binop", "hoist.last", I64, [lo, d], sub="sub")
    if ty != I64:
        last = e.emit("conv", "hoist.last", ty, [last], sub="trunc", elem=I64)
    return last


def _replay(e: _Emitter, c: LoopCheckCandidate, iv_value):
    """Recompute the gep index of the access for a given induction variable value."""
    env = {c.iv: iv_value}
    idx = c.index
    for ins in c.chain:
        args = [env.get(a.name, a) if isinstance(a, Local) else a for a in ins.args]
        env[ins.result] = e.emit(ins.op, f"{ins.result}.h", ins.ty, args, sub=ins.sub,
                                 elem=ins.elem)
    return env.get(idx.name, idx) if isinstance(idx, Local) else idx


def _preheader(f: Function, cfg: CFG, header: str, pred: str) -> Block:
    blocks = f.block_map()
    pb = blocks[pred]
    if cfg.succs[pred] == [header]:
        return pb
    from .instrument import _gen
    label = f.fresh_label(f"{header}.ph")
    new = Block(label, [_gen("br", labels=[header])])
    t = pb.terminator
    t.labels = [label if l == header else l for l in t.labels]
    for ins in blocks[header].phis():
        ins.labels = [label if l == pred else l for l in ins.labels]
    f.blocks.insert(f.blocks.index(pb) + 1, new)
    return new


def _remove_dead_gen(f: Function) -> None:
    changed = True
    while changed:
        changed = False
        used = set()
        for _, ins in f.instructions():
            used.update(ins.uses())
        for b in f.blocks:
            keep = []
            for ins in b.instrs:
                dead = (ins.gen and ins.result is not None and ins.result not in used
                        and (ins.op == "gep" or (ins.op == "intrinsic" and ins.sub in (
                            "get_base", "get_base_alloc", "obj_limit", "reset_tag"))))
                if dead:
                    changed = True
                else:
                    keep.append(ins)
            b.instrs = keep


def hoist_loop_checks(m: Module, f: Function, rw, *, negative_step: bool = False) -> int:
    """Move qualifying in-loop bounds checks to loop preheaders; returns how many."""
    hoisted = 0
    cfg = CFG(f)
    loops = natural_loops(cfg)
    plans: list[tuple[_Counted, list[LoopCheckCandidate]]] = []
    an = _LoopAnalysis(m, f, negative_step)
    for loop in loops:
        inner = set()
        for other in loops:
            if other is not loop and other.header in loop.blocks and other.blocks < loop.blocks:
                inner |= other.blocks
        c = an.counted(loop)
        if c is None:
            continue
        cands = an.candidates(loop, c, inner)
        if cands:
            plans.append((c, cands))
    for c, cands in plans:
        cfg = CFG(f)
        ph = _preheader(f, cfg, c.header, c.outside_pred)
        e = _Emitter(f, rw)
        ty = c.iv.ty
        last = _last_value(e, cands[0], ty)
        for cand in cands:
            first_idx = _replay(e, cand, cand.lower)
            last_idx = _replay(e, cand, last)
            lo_idx, hi_idx = (first_idx, last_idx) if cand.step > 0 else (last_idx, first_idx)
            gty = PtrType(cand.elem)
            plo = e.emit("gep", "hoist.lo", gty, [cand.base_ptr, lo_idx], elem=cand.elem)
            phi_ = e.emit("gep", "hoist.hi", gty, [cand.base_ptr, hi_idx], elem=cand.elem)
            lo = e.emit("intrinsic", "hoist.lo", gty, [plo], sub="reset_tag")
            hi = e.emit("intrinsic", "hoist.hi", gty, [phi_], sub="reset_tag")
            end = e.emit("gep", "hoist.end", I8PTR, [hi, Const(cand.width)], elem=I8)
            bdef = rw.defs[cand.check.args[0].name]
            b = e.emit("intrinsic", "hoist.base", I8PTR, [bdef.args[0]], sub=bdef.sub)
            lim = e.emit("intrinsic", "hoist.lim", I8PTR, [b], sub="obj_limit")
            site = cand.check.attrs["site"]
            e.emit("intrinsic", None, VOID, [b, lo, end, lim], sub="bounds_check", site=site,
                   loc=cand.check.loc)
            e.emit("intrinsic", None, VOID, [lo, end], sub="hoist_guard", site=site,
                   loc=cand.check.loc)
            blk = f.block(cand.access_block)
            blk.instrs.remove(cand.check)
            for ins in blk.instrs:
                if ins.op in ("load", "store") and not ins.gen and ins.iid == site[0]:
                    ins.attrs["hoisted"] = ()
            hoisted += 1
        ph.instrs[-1:-1] = e.out
    if hoisted:
        _remove_dead_gen(f)
    return hoisted
