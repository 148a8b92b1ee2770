"""Tokenizer and recursive-descent parser for the MIR text format (see grammar.ebnf)."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ir import (BINOPS, CONVS, ICMP_PREDS, NULL, Block, Const, Function, Global, GlobalRef,
                 Instr, Local, Module, Param, assign_iids)
from .types import (I8, I64, VOID, ArrayType, FuncType, IntType, MirType, NamedType, PtrType,
                    StructType)


class MirError(Exception):
    """Syntax, type or structural error in MIR input."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}" if line else message)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>;[^\n]*)
  | (?P<local>%[A-Za-z0-9_.$-]+)
  | (?P<global>@[A-Za-z0-9_.$-]+)
  | (?P<tref>\$[A-Za-z0-9_.]+)
  | (?P<int>-?0x[0-9A-Fa-f]+|-?[0-9]+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>\.\.\.|->|[()\[\]{},:=*!+-])
""", re.VERBOSE)

_SCALARS = {"i8": IntType(8), "i16": IntType(16), "i32": IntType(32), "i64": IntType(64),
            "void": VOID}
_STMT_KEYWORDS = {"store", "br", "condbr", "call", "icall", "ret", "intrinsic"}


def tokenize(text: str) -> list[Token]:
    toks = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise MirError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            toks.append(Token("nl", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(Token(kind, m.group(), line, col))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


def _unescape(lit: str) -> bytes:
    body = lit[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1]
            if nxt in "\\\"":
                out.append(ord(nxt))
                i += 2
            elif nxt == "n":
                out.append(10)
                i += 2
            else:
                out.append(int(body[i + 1:i + 3], 16))
                i += 3
        else:
            out.extend(c.encode("utf-8"))
            i += 1
    return bytes(out)


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.module = Module()
        self.locs: dict[int, str] = {}
        for t in self.toks:
            body = t.text[1:].strip() if t.kind == "comment" else ""
            if body.startswith("!loc"):
                self.locs[t.line] = body[4:].strip()

    # -- token helpers -------------------------------------------------
    def _skip_trivia(self):
        while self.toks[self.i].kind in ("nl", "comment"):
            self.i += 1

    def peek(self) -> Token:
        self._skip_trivia()
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.peek()
        self.i += 1
        return t

    def error(self, msg: str, t: Token | None = None):
        t = t or self.peek()
        raise MirError(msg, t.line, t.col)

    def expect(self, text: str) -> Token:
        t = self.next()
        if t.text != text:
            self.error(f"expected {text!r}, found {t.text or 'end of input'!r}", t)
        return t

    def accept(self, text: str) -> bool:
        if self.peek().text == text and self.peek().kind in ("punct", "ident"):
            self.i += 1
            return True
        return False

    def expect_kind(self, kind: str, what: str) -> Token:
        t = self.next()
        if t.kind != kind:
            self.error(f"expected {what}, found {t.text or 'end of input'!r}", t)
        return t

    def integer(self) -> int:
        return int(self.expect_kind("int", "integer").text, 0)

    # -- types ---------------------------------------------------------
    def at_type(self) -> bool:
        t = self.peek()
        return (t.kind == "ident" and (t.text in _SCALARS or t.text == "fn")) \
            or t.kind == "tref" or t.text in ("[", "{", "(")

    def type_(self) -> MirType:
        t = self.next()
        base: MirType
        if t.kind == "ident" and t.text in _SCALARS:
            base = _SCALARS[t.text]
        elif t.kind == "ident" and t.text == "fn":
            self.expect("(")
            params = []
            if not self.accept(")"):
                while True:
                    if self.peek().text == "...":
                        self.error("varargs not supported")
                    params.append(self.type_())
                    if self.accept(")"):
                        break
                    self.expect(",")
            self.expect("->")
            base = FuncType(tuple(params), self.type_())
        elif t.kind == "tref":
            name = t.text[1:]
            base = self.module.types.setdefault(name, NamedType(name))
        elif t.text == "[":
            n = self.integer()
            x = self.next()
            if x.text != "x":
                self.error("expected 'x' in array type", x)
            elem = self.type_()
            self.expect("]")
            try:
                base = ArrayType(n, elem)
            except ValueError as e:
                self.error(str(e), t)
        elif t.text == "{":
            fields = []
            if not self.accept("}"):
                while True:
                    fields.append(self.type_())
                    if self.accept("}"):
                        break
                    self.expect(",")
            base = StructType(tuple(fields))
        elif t.text == "(":
            base = self.type_()
            self.expect(")")
        else:
            self.error(f"expected type, found {t.text!r}", t)
        while self.peek().text == "*":
            self.i += 1
            base = PtrType(base)
        return base

    # -- operands and attributes ----------------------------------------
    def operand(self):
        t = self.next()
        if t.kind == "local":
            return Local(t.text[1:])
        if t.kind == "global":
            return GlobalRef(t.text[1:])
        if t.kind == "int":
            return Const(int(t.text, 0))
        if t.kind == "ident" and t.text == "null":
            return NULL
        self.error(f"expected operand, found {t.text!r}", t)

    def label(self) -> str:
        return self.expect_kind("ident", "block label").text

    def _prev_line(self) -> int:
        j = self.i - 1
        while j >= 0 and self.toks[j].kind in ("nl", "comment"):
            j -= 1
        return self.toks[j].line if j >= 0 else 0

    def attrs(self, same_line: bool = True) -> dict:
        out = {}
        while self.peek().text == "!" and (not same_line or self.peek().line == self._prev_line()):
            self.i += 1
            name = self.expect_kind("ident", "attribute name").text
            args = []
            if self.peek().text == "(" and self.toks[self.i - 1].line == self.peek().line:
                self.i += 1
                if not self.accept(")"):
                    while True:
                        t = self.next()
                        if t.kind == "local":
                            args.append(Local(t.text[1:]))
                        elif t.kind == "int":
                            args.append(int(t.text, 0))
                        elif t.kind == "ident":
                            args.append(t.text)
                        elif t.kind == "string":
                            args.append(_unescape(t.text).decode())
                        else:
                            self.error(f"bad attribute argument {t.text!r}", t)
                        if self.accept(")"):
                            break
                        self.expect(",")
            out[name] = tuple(args)
        return out

    # -- top level -----------------------------------------------------
    def parse(self) -> Module:
        names: set[str] = set()
        while True:
            t = self.peek()
            if t.kind == "eof":
                break
            if t.text == "!":
                self.module.attrs.update(self.attrs(same_line=False))
            elif t.text == "type":
                self.i += 1
                ref = self.expect_kind("tref", "type name")
                name = ref.text[1:]
                named = self.module.types.setdefault(name, NamedType(name))
                if named.body:
                    self.error(f"duplicate definition ${name}", ref)
                self.expect("=")
                named.body.append(self.type_())
            elif t.text == "global":
                g = self.global_()
                if g.name in names:
                    raise MirError(f"duplicate definition @{g.name}", g.line, 1)
                names.add(g.name)
                self.module.globals.append(g)
            elif t.text == "func":
                f = self.function()
                if f.name in names:
                    raise MirError(f"duplicate definition @{f.name}", f.line, 1)
                names.add(f.name)
                self.module.functions.append(f)
            else:
                self.error(f"expected 'global', 'func' or 'type', found {t.text!r}", t)
        for name, named in self.module.types.items():
            if not named.body:
                raise MirError(f"undefined type ${name}")
        return self.module

    def global_(self) -> Global:
        kw = self.expect("global")
        name = self.expect_kind("global", "global name").text[1:]
        self.expect(":")
        ty = self.type_()
        init = None
        if self.accept("="):
            init = self.init()
        return Global(name, ty, init, self.attrs(), line=kw.line)

    def init(self):
        t = self.next()
        if t.kind == "int":
            return int(t.text, 0)
        if t.kind == "ident" and t.text == "null":
            return NULL
        if t.kind == "ident" and t.text == "zeroinit":
            return None
        if t.kind == "string":
            return _unescape(t.text)
        if t.kind == "global":
            ref = GlobalRef(t.text[1:])
            off = 0
            nt = self.peek()
            if nt.text == "+":
                self.i += 1
                off = self.integer()
            elif nt.text == "-":
                self.i += 1
                off = -self.integer()
            elif nt.kind == "int" and nt.text.startswith("-") and nt.line == t.line:
                off = self.integer()
            return (ref, off)
        if t.text == "{":
            items = []
            if not self.accept("}"):
                while True:
                    items.append(self.init())
                    if self.accept("}"):
                        break
                    self.expect(",")
            return items
        self.error(f"bad initializer {t.text!r}", t)

    def function(self) -> Function:
        kw = self.expect("func")
        name = self.expect_kind("global", "function name").text[1:]
        self.expect("(")
        params = []
        if not self.accept(")"):
            while True:
                if self.peek().text == "...":
                    self.error("varargs not supported")
                pname = self.expect_kind("local", "parameter").text[1:]
                self.expect(":")
                params.append(Param(pname, self.type_()))
                if self.accept(")"):
                    break
                self.expect(",")
        self.expect("->")
        ret = self.type_()
        f = Function(name, params, ret, line=kw.line)
        self.expect("{")
        block: Block | None = None
        while not self.accept("}"):
            t = self.peek()
            if t.kind == "eof":
                self.error("unterminated function body")
            nxt = self.toks[self._next_significant(self.i + 1)]
            if t.kind == "ident" and t.text not in _STMT_KEYWORDS and nxt.text == ":":
                self.i += 1
                self.expect(":")
                block = Block(t.text)
                f.blocks.append(block)
                continue
            if block is None:
                self.error("instruction outside of a block")
            ins = self.instr(f)
            block.instrs.append(ins)
        if not f.blocks:
            raise MirError(f"function @{name} has no blocks", kw.line, kw.col)
        assign_iids(f)
        return f

    def _next_significant(self, j: int) -> int:
        while self.toks[j].kind in ("nl", "comment"):
            j += 1
        return j

    # -- instructions --------------------------------------------------
    def instr(self, f: Function) -> Instr:
        start = self.peek()
        result = None
        if start.kind == "local":
            result = start.text[1:]
            self.i += 1
            self.expect("=")
        t = self.expect_kind("ident", "opcode")
        ins = self._body(t, result, f)
        ins.line, ins.col = start.line, start.col
        ins.loc = self.locs.get(start.line)
        attrs = self.attrs()
        if "id" in attrs:
            ins.iid = str(attrs.pop("id")[0])
        ins.attrs.update(attrs)
        if ins.result is None and result is not None:
            raise MirError(f"'{t.text}' does not produce a value", start.line, start.col)
        if ins.result is not None and result is None:
            raise MirError(f"'{t.text}' result must be named", start.line, start.col)
        return ins

    def _body(self, t: Token, result, f: Function) -> Instr:
        op = t.text
        if op == "alloca":
            elem = self.type_()
            return Instr("alloca", result, PtrType(elem), elem=elem)
        if op == "gep":
            elem = self.type_()
            self.expect(",")
            base = self.operand()
            self.expect(",")
            idx = self.operand()
            return Instr("gep", result, PtrType(elem), [base, idx], elem=elem)
        if op == "load":
            ty = self.type_()
            self.expect(",")
            return Instr("load", result, ty, [self.operand()])
        if op == "store":
            ty = self.type_()
            v = self.operand()
            self.expect(",")
            return Instr("store", None, ty, [v, self.operand()])
        if op in ("bitcast", "ptrtoint", "inttoptr"):
            v = self.operand()
            self.expect("to")
            return Instr(op, result, self.type_(), [v])
        if op in CONVS:
            src = self.type_()
            v = self.operand()
            self.expect("to")
            return Instr("conv", result, self.type_(), [v], sub=op, elem=src)
        if op == "phi":
            ty = self.type_()
            args, labels = [], []
            while True:
                self.expect("[")
                args.append(self.operand())
                self.expect(",")
                labels.append(self.label())
                self.expect("]")
                if not self.accept(","):
                    break
            return Instr("phi", result, ty, args, labels=labels)
        if op == "select":
            ty = self.type_()
            c = self.operand()
            self.expect(",")
            a = self.operand()
            self.expect(",")
            return Instr("select", result, ty, [c, a, self.operand()])
        if op == "icmp":
            pred = self.expect_kind("ident", "predicate")
            if pred.text not in ICMP_PREDS:
                self.error(f"unknown icmp predicate {pred.text!r}", pred)
            ty = self.type_()
            a = self.operand()
            self.expect(",")
            return Instr("icmp", result, I8, [a, self.operand()], sub=pred.text, elem=ty)
        if op in BINOPS:
            ty = self.type_()
            a = self.operand()
            self.expect(",")
            return Instr("binop", result, ty, [a, self.operand()], sub=op)
        if op == "psub":
            ty = self.type_()
            a = self.operand()
            self.expect(",")
            return Instr("psub", result, I64, [a, self.operand()], elem=ty)
        if op == "br":
            return Instr("br", labels=[self.label()])
        if op == "condbr":
            c = self.operand()
            self.expect(",")
            l1 = self.label()
            self.expect(",")
            return Instr("condbr", args=[c], labels=[l1, self.label()])
        if op in ("call", "icall", "intrinsic"):
            ty = self.type_()
            if op == "call":
                callee = self.expect_kind("global", "callee").text[1:]
                args = []
            elif op == "icall":
                args = [self.operand()]
                callee = None
            else:
                callee = self.expect_kind("ident", "intrinsic name").text
                args = []
            self.expect("(")
            if not self.accept(")"):
                while True:
                    if self.peek().text == "...":
                        self.error("varargs not supported")
                    args.append(self.operand())
                    if self.accept(")"):
                        break
                    self.expect(",")
            res = result if not ty.is_void else None
            if ty.is_void and result is not None:
                self.error("void call cannot produce a value", t)
            return Instr(op, res, ty, args, sub=callee)
        if op == "ret":
            nt = self.peek()
            if nt.kind == "ident" and nt.text == "void":
                self.i += 1
                return Instr("ret", ty=VOID)
            if self.at_type():
                ty = self.type_()
            else:
                ty = f.ret
            if ty.is_void:
                return Instr("ret", ty=VOID)
            return Instr("ret", ty=ty, args=[self.operand()])
        self.error(f"unknown opcode {op!r}", t)


def parse_module(text: str, validate: bool = True) -> Module:
    """Parse MIR source; raise MirError with line/column on any syntax or validation error."""
    m = Parser(text).parse()
    if validate:
        from .validate import validate_ssa
        diags = validate_ssa(m)
        if diags:
            d = diags[0]
            raise MirError(d.message, d.line, d.col)
    return m
