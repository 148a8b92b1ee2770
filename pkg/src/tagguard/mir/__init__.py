"""MIR: a minimal SSA language with pointers, its parser, printer and validator."""

from __future__ import annotations

from .ir import (NULL, Block, Const, Function, Global, GlobalRef, Instr, Local, Module, Null,
                 Param)
from .parser import MirError, parse_module
from .printer import print_module
from .types import (I8, I16, I32, I64, VOID, ArrayType, FuncType, IntType, MirType, NamedType,
                    PtrType, StructType, align_of, element_size, size_of)
from .validate import Diagnostic, validate_ssa

__all__ = [
    "NULL", "Block", "Const", "Function", "Global", "GlobalRef", "Instr", "Local", "Module",
    "Null", "Param", "MirError", "parse_module", "print_module", "I8", "I16", "I32", "I64",
    "VOID", "ArrayType", "FuncType", "IntType", "MirType", "NamedType", "PtrType", "StructType",
    "align_of", "element_size", "size_of", "Diagnostic", "validate_ssa",
]
