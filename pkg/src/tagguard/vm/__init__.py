"""Interpreter for plain and checked MIR programs."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..allocator import DEFAULT_SEGMENT_SIZE
from ..mir.ir import Module
from .machine import Machine
from .reports import KIND_EXIT, VM_ERROR_EXIT, GuestAbort, GuestExit, ViolationReport, VMError


@dataclass
class ExecResult:
    exit_code: int
    stdout: str
    reports: list[ViolationReport] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    allocator: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def violation(self) -> ViolationReport | None:
        return self.reports[0] if self.reports else None


def execute(m: Module, entry: str = "main", argv=(), *, segment_size: int = DEFAULT_SEGMENT_SIZE,
            step_limit: int | None = None, trace=None) -> ExecResult:
    """Run `entry` with integer arguments; never raises for guest-level failures."""
    vm = None
    reports: list[ViolationReport] = []
    error = None
    try:
        vm = Machine(m, segment_size=segment_size, step_limit=step_limit, trace=trace)
        code = vm.run(entry, list(argv))
    except GuestExit as e:
        code = e.code
    except GuestAbort as e:
        reports.append(e.report)
        code = e.report.exit_code
    except VMError as e:
        error = str(e)
        code = VM_ERROR_EXIT
    counters, alloc_stats, out = {}, {}, ""
    if vm is not None:
        counters = dict(vm.counters)
        counters["allocator_lookups"] = vm.alloc.stats.lookups
        counters["steps"] = vm.steps
        alloc_stats = vm.alloc.stats.as_dict()
        out = "".join(vm.stdout)
    return ExecResult(code & 0xFF, out, reports, counters, alloc_stats, error)


__all__ = ["ExecResult", "execute", "Machine", "ViolationReport", "KIND_EXIT", "VMError"]
