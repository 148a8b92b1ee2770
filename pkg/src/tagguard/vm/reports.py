"""Violation reports and the exceptions that carry them out of the interpreter."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

KIND_EXIT = {
    "oob-read": 10,
    "oob-write": 10,
    "unmapped": 11,
    "invalid-unrecoverable": 12,
    "hoist-guard": 13,
    "intrinsic-oob": 14,
    "double-free": 15,
}
VM_ERROR_EXIT = 2


def _hex(v):
    return None if v is None else f"{v:#x}"


@dataclass
class ViolationReport:
    kind: str
    function: str | None = None
    block: str | None = None
    instr: str | None = None
    address: int | None = None
    base: int | None = None
    limit: int | None = None
    message: str = ""
    loc: str | None = None

    @property
    def exit_code(self) -> int:
        return KIND_EXIT[self.kind]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("address", "base", "limit"):
            d[k] = _hex(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ViolationReport:
        d = dict(d)
        for k in ("address", "base", "limit"):
            if d.get(k) is not None:
                d[k] = int(d[k], 16)
        return cls(**d)

    def human(self) -> str:
        where = f"@{self.function}" if self.function else "?"
        if self.instr:
            where += f" {self.instr}"
        if self.loc:
            where += f" ({self.loc})"
        parts = [f"tagguard: {self.kind} in {where}"]
        if self.address is not None:
            parts.append(f"address={self.address:#x}")
        if self.base is not None:
            parts.append(f"base={self.base:#x}")
        if self.limit is not None:
            parts.append(f"limit={self.limit:#x}")
        if self.message:
            parts.append(self.message)
        return " ".join(parts)


class GuestAbort(Exception):
    def __init__(self, report: ViolationReport):
        self.report = report
        super().__init__(report.human())


class GuestExit(Exception):
    def __init__(self, code: int):
        self.code = code
        super().__init__(f"exit({code})")


class VMError(Exception):
    """The program cannot be executed (step limit, division by zero, bad call target...)."""
