"""Control-flow graph, dominator tree and natural loops over a MIR function."""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Function, Instr


class CFG:
    def __init__(self, f: Function):
        self.f = f
        self.entry = f.blocks[0].label if f.blocks else None
        self.succs: dict[str, list[str]] = {}
        self.preds: dict[str, list[str]] = {b.label: [] for b in f.blocks}
        for b in f.blocks:
            ss = [s for s in b.successors() if s in self.preds]
            self.succs[b.label] = ss
            for s in ss:
                if b.label not in self.preds[s]:
                    self.preds[s].append(b.label)
        self.rpo = self._rpo()
        self.reachable = set(self.rpo)
        self.idom = self._dominators()

    def _rpo(self) -> list[str]:
        if self.entry is None:
            return []
        seen = {self.entry}
        order = []
        stack = [(self.entry, iter(self.succs[self.entry]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                order.append(node)
            elif nxt not in seen:
                seen.add(nxt)
                stack.append((nxt, iter(self.succs[nxt])))
        order.reverse()
        return order

    def _dominators(self) -> dict[str, str | None]:
        # Cooper, Harvey & Kennedy iterative algorithm.
        if not self.rpo:
            return {}
        index = {b: i for i, b in enumerate(self.rpo)}
        idom: dict[str, str | None] = {self.entry: self.entry}

        def intersect(a, b):
            while a != b:
                while index[a] > index[b]:
                    a = idom[a]
                while index[b] > index[a]:
                    b = idom[b]
            return a

        changed = True
        while changed:
            changed = False
            for b in self.rpo[1:]:
                new = None
                for p in self.preds[b]:
                    if p in idom:
                        new = p if new is None else intersect(p, new)
                if new is not None and idom.get(b) != new:
                    idom[b] = new
                    changed = True
        idom[self.entry] = None
        return idom

    def dominates(self, a: str, b: str) -> bool:
        """Block `a` dominates block `b` (reflexive)."""
        if b not in self.reachable:
            return True
        if a not in self.reachable:
            return False
        n: str | None = b
        while n is not None:
            if n == a:
                return True
            n = self.idom[n]
        return False

    def exits(self, blocks: set[str]) -> list[tuple[str, str]]:
        return [(b, s) for b in blocks for s in self.succs[b] if s not in blocks]


@dataclass
class Loop:
    header: str
    latches: list[str]
    blocks: set[str] = field(default_factory=set)


def natural_loops(cfg: CFG) -> list[Loop]:
    loops: dict[str, Loop] = {}
    for b in cfg.rpo:
        for s in cfg.succs[b]:
            if cfg.dominates(s, b):
                loop = loops.setdefault(s, Loop(s, []))
                loop.latches.append(b)
                body = {s}
                work = [b]
                while work:
                    n = work.pop()
                    if n in body:
                        continue
                    body.add(n)
                    work.extend(p for p in cfg.preds[n] if p in cfg.reachable)
                loop.blocks |= body
    return sorted(loops.values(), key=lambda l: cfg.rpo.index(l.header))


class DefUse:
    """Definition site and position for every SSA value of a function."""

    def __init__(self, f: Function):
        self.defs: dict[str, Instr] = {}
        self.block_of: dict[str, str] = {}
        self.pos: dict[str, int] = {}
        self.params = {p.name for p in f.params}
        self.users: dict[str, list[Instr]] = {}
        for b in f.blocks:
            for i, ins in enumerate(b.instrs):
                if ins.result is not None:
                    self.defs[ins.result] = ins
                    self.block_of[ins.result] = b.label
                    self.pos[ins.result] = i
                for u in ins.uses():
                    self.users.setdefault(u, []).append(ins)
