"""Canonical text form of MIR modules; `parse_module(print_module(m))` reproduces `m`."""

from __future__ import annotations

import re

from .ir import Function, Global, GlobalRef, Instr, Local, Module, Null, positional_iids

HEADER = "; mir module\n"
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")


def _quote(data: bytes) -> str:
    out = []
    for b in data:
        if 0x20 <= b < 0x7F and b not in (0x22, 0x5C):
            out.append(chr(b))
        else:
            out.append(f"\\{b:02X}")
    return '"' + "".join(out) + '"'


def _attr_arg(a) -> str:
    if isinstance(a, Local):
        return str(a)
    if isinstance(a, int):
        return str(a)
    if isinstance(a, str) and _IDENT.match(a):
        return a
    return _quote(str(a).encode())


def format_attrs(attrs: dict) -> str:
    parts = []
    for name in sorted(attrs):
        args = attrs[name]
        if args:
            parts.append(f"!{name}(" + ", ".join(_attr_arg(a) for a in args) + ")")
        else:
            parts.append(f"!{name}")
    return " ".join(parts)


def format_init(init) -> str:
    if init is None:
        return "zeroinit"
    if isinstance(init, Null):
        return "null"
    if isinstance(init, bool):
        return str(int(init))
    if isinstance(init, int):
        return str(init)
    if isinstance(init, bytes):
        return _quote(init)
    if isinstance(init, tuple):
        ref, off = init
        if off > 0:
            return f"{ref} + {off}"
        if off < 0:
            return f"{ref} - {-off}"
        return str(ref)
    return "{" + ", ".join(format_init(i) for i in init) + "}"


def _args(xs) -> str:
    return ", ".join(str(a) for a in xs)


def format_instr(ins: Instr) -> str:
    op = ins.op
    if op == "alloca":
        body = f"alloca {ins.elem}"
    elif op == "gep":
        body = f"gep {ins.elem}, {ins.args[0]}, {ins.args[1]}"
    elif op == "load":
        body = f"load {ins.ty}, {ins.args[0]}"
    elif op == "store":
        body = f"store {ins.ty} {ins.args[0]}, {ins.args[1]}"
    elif op in ("bitcast", "ptrtoint", "inttoptr"):
        body = f"{op} {ins.args[0]} to {ins.ty}"
    elif op == "conv":
        body = f"{ins.sub} {ins.elem} {ins.args[0]} to {ins.ty}"
    elif op == "phi":
        arms = ", ".join(f"[{a}, {l}]" for a, l in zip(ins.args, ins.labels))
        body = f"phi {ins.ty} {arms}"
    elif op == "select":
        body = f"select {ins.ty} {_args(ins.args)}"
    elif op == "icmp":
        body = f"icmp {ins.sub} {ins.elem} {_args(ins.args)}"
    elif op == "binop":
        body = f"{ins.sub} {ins.ty} {_args(ins.args)}"
    elif op == "psub":
        body = f"psub {ins.elem} {_args(ins.args)}"
    elif op == "br":
        body = f"br {ins.labels[0]}"
    elif op == "condbr":
        body = f"condbr {ins.args[0]}, {ins.labels[0]}, {ins.labels[1]}"
    elif op == "call":
        body = f"call {ins.ty} @{ins.sub}({_args(ins.args)})"
    elif op == "icall":
        body = f"icall {ins.ty} {ins.args[0]}({_args(ins.args[1:])})"
    elif op == "intrinsic":
        body = f"intrinsic {ins.ty} {ins.sub}({_args(ins.args)})"
    elif op == "ret":
        body = f"ret {ins.ty} {ins.args[0]}" if ins.args else "ret void"
    else:
        raise ValueError(f"cannot print opcode {op!r}")
    if ins.result is not None:
        body = f"%{ins.result} = {body}"
    return body


def format_function(f: Function) -> str:
    params = ", ".join(f"%{p.name}: {p.ty}" for p in f.params)
    lines = [f"func @{f.name}({params}) -> {f.ret} {{"]
    positional = positional_iids(f)
    for b in f.blocks:
        lines.append(f"{b.label}:")
        for ins in b.instrs:
            text = "  " + format_instr(ins)
            attrs = dict(ins.attrs)
            if not ins.gen and ins.iid is not None and ins.iid != positional.get(id(ins)):
                attrs["id"] = (ins.iid,)
            if attrs:
                text += " " + format_attrs(attrs)
            if ins.loc:
                text += f" ; !loc {ins.loc}"
            lines.append(text)
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_global(g: Global) -> str:
    text = f"global @{g.name} : {g.ty}"
    if g.init is not None:
        text += f" = {format_init(g.init)}"
    if g.attrs:
        text += " " + format_attrs(g.attrs)
    return text + "\n"


def print_module(m: Module) -> str:
    parts = [HEADER]
    if m.attrs:
        parts.append(format_attrs(m.attrs) + "\n")
    for name, named in m.types.items():
        parts.append(f"type ${name} = {named.body[0]}\n")
    for g in m.globals:
        parts.append(format_global(g))
    for f in m.functions:
        parts.append("\n" + format_function(f))
    return "".join(parts)
