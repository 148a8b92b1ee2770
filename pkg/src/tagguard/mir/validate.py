"""Structural and type validation of MIR modules."""

from __future__ import annotations

from dataclasses import dataclass

from .cfg import CFG
from .intrinsics import SIGNATURES
from .ir import NULL, Const, Function, GlobalRef, Instr, Local, Module, Null
from .types import I64, FuncType, IntType, MirType, PtrType, is_sized, same_type


@dataclass(frozen=True)
class Diagnostic:
    message: str
    function: str | None = None
    line: int = 0
    col: int = 0

    def __str__(self):
        return self.message


def _kind_ok(kind: str, t: MirType) -> bool:
    t = t.resolved()
    if kind == "int":
        return isinstance(t, IntType)
    if kind == "ptr":
        return isinstance(t, PtrType)
    if kind == "fn":
        return isinstance(t, PtrType) and isinstance(t.pointee.resolved(), FuncType)
    return kind == "void" and t.is_void


class _FunctionChecker:
    def __init__(self, m: Module, f: Function):
        self.m = m
        self.f = f
        self.diags: list[Diagnostic] = []
        self.types: dict[str, MirType] = {}

    def diag(self, msg: str, ins: Instr | None = None):
        line = ins.line if ins is not None else self.f.line
        col = ins.col if ins is not None else 0
        self.diags.append(Diagnostic(msg, self.f.name, line, col))

    def run(self) -> list[Diagnostic]:
        f = self.f
        labels = [b.label for b in f.blocks]
        if len(set(labels)) != len(labels):
            dup = next(l for l in labels if labels.count(l) > 1)
            self.diag(f"duplicate block label {dup}")
            return self.diags
        label_set = set(labels)
        for p in f.params:
            pt = p.ty.resolved()
            if not (pt.is_int or pt.is_pointer):
                self.diag(f"parameter %{p.name} must have integer or pointer type")
        rt = f.ret.resolved()
        if not (rt.is_int or rt.is_pointer or rt.is_void):
            self.diag(f"@{f.name} must return an integer, a pointer or void")
        defined_at: dict[str, tuple[str, int]] = {}
        for p in f.params:
            if p.name in self.types:
                self.diag(f"duplicate SSA definition %{p.name}")
            self.types[p.name] = p.ty
            defined_at[p.name] = (f.blocks[0].label, -1)
        for b in f.blocks:
            if not b.instrs or not b.instrs[-1].is_terminator:
                self.diag(f"block {b.label} does not end in a terminator",
                          b.instrs[-1] if b.instrs else None)
            seen_non_phi = False
            for i, ins in enumerate(b.instrs):
                if ins.is_terminator and i != len(b.instrs) - 1:
                    self.diag(f"terminator in the middle of block {b.label}", ins)
                if ins.op == "phi":
                    if seen_non_phi:
                        self.diag(f"phi %{ins.result} does not lead block {b.label}", ins)
                else:
                    seen_non_phi = True
                for lab in ins.labels:
                    if lab not in label_set:
                        self.diag(f"unknown block label {lab}", ins)
                if ins.result is not None:
                    if ins.result in self.types:
                        self.diag(f"duplicate SSA definition %{ins.result}", ins)
                        continue
                    self.types[ins.result] = ins.ty
                    defined_at[ins.result] = (b.label, i)
        if self.diags:
            return self.diags

        cfg = CFG(f)
        for b in f.blocks:
            preds = cfg.preds[b.label]
            for ins in b.phis():
                if len(ins.args) != len(preds) or set(ins.labels) != set(preds) \
                        or len(set(ins.labels)) != len(ins.labels):
                    self.diag(f"phi arity: %{ins.result} has {len(ins.args)} incoming values "
                              f"for {len(preds)} predecessors", ins)
            for i, ins in enumerate(b.instrs):
                if ins.op == "phi":
                    for a, lab in zip(ins.args, ins.labels):
                        if isinstance(a, Local):
                            self._check_dominance(cfg, defined_at, a.name, lab, None, ins)
                else:
                    for u in ins.uses():
                        self._check_dominance(cfg, defined_at, u, b.label, i, ins)
        if self.diags:
            return self.diags
        for _, ins in f.instructions():
            self.check_types(ins)
        return self.diags

    def _check_dominance(self, cfg, defined_at, name, use_block, use_pos, ins):
        if name not in defined_at:
            self.diag(f"use of undefined value %{name}", ins)
            return
        dblock, dpos = defined_at[name]
        if use_pos is None:
            ok = cfg.dominates(dblock, use_block)
        elif dblock == use_block:
            ok = dpos < use_pos
        else:
            ok = cfg.dominates(dblock, use_block)
        if not ok:
            self.diag(f"dominance violation at %{name}", ins)

    # -- types ---------------------------------------------------------
    def optype(self, a, ctx: MirType | None, ins: Instr) -> MirType | None:
        if isinstance(a, Local):
            return self.types.get(a.name)
        if isinstance(a, GlobalRef):
            t = self.m.symbol_type(a.name)
            if t is None:
                self.diag(f"unknown symbol @{a.name}", ins)
            return t
        if isinstance(a, Const):
            if ctx is not None and not ctx.resolved().is_int:
                self.diag(f"type mismatch: integer constant {a.value} used as {ctx}", ins)
                return None
            return ctx if ctx is not None else I64
        if isinstance(a, Null):
            if ctx is not None and not ctx.resolved().is_pointer:
                self.diag(f"type mismatch: null used as {ctx}", ins)
                return None
            return ctx
        return None

    def expect(self, a, t: MirType, ins: Instr, what: str):
        at = self.optype(a, t, ins)
        if at is not None and not same_type(at, t):
            self.diag(f"type mismatch: {what} {a} has type {at}, expected {t}", ins)

    def expect_kind(self, a, kind: str, ins: Instr, what: str) -> MirType | None:
        ctx = I64 if kind == "int" and isinstance(a, Const) else None
        if isinstance(a, Null) and kind in ("ptr", "fn"):
            return None
        at = self.optype(a, ctx, ins)
        if at is not None and not _kind_ok(kind, at):
            self.diag(f"type mismatch: {what} {a} has type {at}, expected {kind}", ins)
        return at

    def check_types(self, ins: Instr):
        op = ins.op
        name = f"%{ins.result}" if ins.result else op
        if op == "alloca":
            if not is_sized(ins.elem):
                self.diag(f"alloca of unsized type {ins.elem}", ins)
        elif op == "gep":
            self.expect_kind(ins.args[0], "ptr", ins, "gep base")
            self.expect_kind(ins.args[1], "int", ins, "gep index")
            if not is_sized(ins.elem):
                self.diag(f"gep over unsized type {ins.elem}", ins)
        elif op == "load":
            if not (ins.ty.resolved().is_int or ins.ty.resolved().is_pointer):
                self.diag(f"load of non-scalar type {ins.ty}", ins)
            self.expect_kind(ins.args[0], "ptr", ins, "load address")
        elif op == "store":
            if not (ins.ty.resolved().is_int or ins.ty.resolved().is_pointer):
                self.diag(f"store of non-scalar type {ins.ty}", ins)
            self.expect(ins.args[0], ins.ty, ins, "stored value")
            self.expect_kind(ins.args[1], "ptr", ins, "store address")
        elif op == "bitcast":
            self.expect_kind(ins.args[0], "ptr", ins, "bitcast operand")
            if not ins.ty.resolved().is_pointer:
                self.diag(f"type mismatch: bitcast to non-pointer {ins.ty}", ins)
        elif op == "ptrtoint":
            self.expect_kind(ins.args[0], "ptr", ins, "ptrtoint operand")
            if not ins.ty.resolved().is_int:
                self.diag(f"type mismatch: ptrtoint to non-integer {ins.ty}", ins)
        elif op == "inttoptr":
            self.expect_kind(ins.args[0], "int", ins, "inttoptr operand")
            if not ins.ty.resolved().is_pointer:
                self.diag(f"type mismatch: inttoptr to non-pointer {ins.ty}", ins)
        elif op == "conv":
            src, dst = ins.elem.resolved(), ins.ty.resolved()
            if not (src.is_int and dst.is_int):
                self.diag(f"type mismatch: {ins.sub} needs integer types", ins)
            else:
                self.expect(ins.args[0], ins.elem, ins, f"{ins.sub} operand")
                widen = ins.sub in ("zext", "sext")
                if (widen and dst.width <= src.width) or (not widen and dst.width >= src.width):
                    self.diag(f"type mismatch: invalid {ins.sub} from {src} to {dst}", ins)
        elif op == "phi":
            if not (ins.ty.resolved().is_int or ins.ty.resolved().is_pointer):
                self.diag(f"phi of non-scalar type {ins.ty}", ins)
            for a in ins.args:
                self.expect(a, ins.ty, ins, "phi operand")
        elif op == "select":
            self.expect_kind(ins.args[0], "int", ins, "select condition")
            for a in ins.args[1:]:
                self.expect(a, ins.ty, ins, "select operand")
        elif op == "icmp":
            et = ins.elem.resolved()
            if not (et.is_int or et.is_pointer):
                self.diag(f"icmp over non-scalar type {ins.elem}", ins)
            for a in ins.args:
                self.expect(a, ins.elem, ins, "icmp operand")
        elif op == "binop":
            if not ins.ty.resolved().is_int:
                self.diag(f"type mismatch: {ins.sub} on non-integer type {ins.ty}", ins)
            for a in ins.args:
                self.expect(a, ins.ty, ins, f"{ins.sub} operand")
        elif op == "psub":
            if not ins.elem.resolved().is_pointer:
                self.diag(f"type mismatch: psub on non-pointer type {ins.elem}", ins)
            for a in ins.args:
                self.expect(a, ins.elem, ins, "psub operand")
        elif op == "condbr":
            self.expect_kind(ins.args[0], "int", ins, "branch condition")
        elif op == "ret":
            if self.f.ret.is_void:
                if ins.args:
                    self.diag("type mismatch: value returned from void function", ins)
            elif not ins.args:
                self.diag(f"type mismatch: missing return value of type {self.f.ret}", ins)
            else:
                self.expect(ins.args[0], self.f.ret, ins, "return value")
        elif op == "call":
            callee = self.m.function(ins.sub)
            if callee is None:
                self.diag(f"unknown function @{ins.sub}", ins)
                return
            self._check_call(ins, callee.type, ins.args, name)
        elif op == "icall":
            ft = self.optype(ins.args[0], None, ins)
            if ft is None or not _kind_ok("fn", ft):
                self.diag(f"type mismatch: indirect callee {ins.args[0]} is not a function "
                          f"pointer", ins)
                return
            self._check_call(ins, ft.resolved().pointee.resolved(), ins.args[1:], name)
        elif op == "intrinsic":
            sig = SIGNATURES.get(ins.sub)
            if sig is None:
                self.diag(f"unknown intrinsic {ins.sub}", ins)
                return
            if len(ins.args) != len(sig.params):
                self.diag(f"intrinsic {ins.sub} expects {len(sig.params)} arguments, "
                          f"got {len(ins.args)}", ins)
                return
            for a, kind in zip(ins.args, sig.params):
                self.expect_kind(a, kind, ins, f"{ins.sub} argument")
            if sig.result == "void":
                if not ins.ty.is_void:
                    self.diag(f"type mismatch: intrinsic {ins.sub} returns void", ins)
            elif not _kind_ok(sig.result, ins.ty) and not ins.ty.is_void:
                self.diag(f"type mismatch: intrinsic {ins.sub} returns {sig.result}", ins)
        rec = ins.attrs.get("recover")
        if rec and (len(rec) != 2 or not isinstance(rec[0], Local) or not isinstance(rec[1], int)):
            self.diag("malformed !recover attribute", ins)

    def _check_call(self, ins: Instr, ft: FuncType, args, name):
        if len(args) != len(ft.params):
            self.diag(f"call {name}: expected {len(ft.params)} arguments, got {len(args)}", ins)
            return
        for a, pt in zip(args, ft.params):
            self.expect(a, pt, ins, "call argument")
        if not same_type(ins.ty, ft.ret):
            self.diag(f"type mismatch: call returns {ft.ret}, declared {ins.ty}", ins)


def _check_init(m: Module, g, t: MirType, init, diags):
    t = t.resolved()
    if init is None:
        return
    bad = Diagnostic(f"type mismatch: bad initializer for @{g.name}", None, g.line, 1)
    if isinstance(init, int):
        if not t.is_int:
            diags.append(bad)
    elif init is NULL or isinstance(init, Null):
        if not t.is_pointer:
            diags.append(bad)
    elif isinstance(init, tuple):
        ref, _ = init
        if not t.is_pointer:
            diags.append(bad)
        elif m.symbol_type(ref.name) is None:
            diags.append(Diagnostic(f"unknown symbol @{ref.name}", None, g.line, 1))
    elif isinstance(init, bytes):
        from .types import ArrayType
        if not (isinstance(t, ArrayType) and t.elem.resolved() == IntType(8)
                and len(init) <= t.count):
            diags.append(bad)
    elif isinstance(init, list):
        from .types import ArrayType, StructType
        if isinstance(t, ArrayType) and len(init) <= t.count:
            for item in init:
                _check_init(m, g, t.elem, item, diags)
        elif isinstance(t, StructType) and len(init) == len(t.fields):
            for item, ft in zip(init, t.fields):
                _check_init(m, g, ft, item, diags)
        else:
            diags.append(bad)


def validate_ssa(m: Module) -> list[Diagnostic]:
    """Return diagnostics for every violated structural or typing rule (empty if valid)."""
    diags: list[Diagnostic] = []
    for name, named in m.types.items():
        try:
            body = named.resolved()
        except TypeError:
            diags.append(Diagnostic(f"recursive type alias ${name}"))
            continue
        if not isinstance(body, (FuncType, PtrType)) and not body.is_void and not is_sized(body):
            diags.append(Diagnostic(f"recursive by-value type ${name}"))
    if diags:
        return diags
    names = set()
    for g in m.globals:
        if g.name in names:
            diags.append(Diagnostic(f"duplicate definition @{g.name}", None, g.line, 1))
        names.add(g.name)
        if not is_sized(g.ty):
            diags.append(Diagnostic(f"global @{g.name} has unsized type", None, g.line, 1))
        else:
            _check_init(m, g, g.ty, g.init, diags)
    for f in m.functions:
        if f.name in names:
            diags.append(Diagnostic(f"duplicate definition @{f.name}", f.name, f.line, 1))
        names.add(f.name)
    for f in m.functions:
        diags.extend(_FunctionChecker(m, f).run())
    return diags
