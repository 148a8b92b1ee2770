"""Spatial memory safety for MIR programs through tagged pointers.

Pointers carry, in their upper 16 bits, the distance to the start of the object their
static base points into plus an "invalid" flag. The instrumenter inserts bounds checks
and tag updates into a plain module; the VM executes the result over a simulated
address space.
"""

from __future__ import annotations

from .instrument import (InstrumentationStats, InstrumentOptions, UnsupportedConstruct,
                         instrument, instrument_module)
from .mir import parse_module, print_module
from .staticbase import compute_static_bases
from .vm import ExecResult, execute

__version__ = "0.1.0"

__all__ = ["InstrumentationStats", "InstrumentOptions", "UnsupportedConstruct", "instrument",
           "instrument_module", "parse_module", "print_module", "compute_static_bases",
           "ExecResult", "execute"]
