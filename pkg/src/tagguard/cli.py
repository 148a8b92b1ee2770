"""Command-line driver: `tagguard instrument|run|diff|corpus`."""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .allocator import DEFAULT_SEGMENT_SIZE
from .instrument import InstrumentOptions, UnsupportedConstruct, instrument_module
from .mir.ir import Module
from .mir.parser import MirError, parse_module
from .mir.printer import print_module
from .vm import ExecResult, execute

USAGE_ERROR = 2


class CliError(Exception):
    pass


def load_module(path: str | Path) -> Module:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise CliError(f"cannot read {p}: {e.strerror}") from None
    try:
        return parse_module(text)
    except MirError as e:
        raise CliError(f"{p}:{e}") from None


def options_from(args) -> InstrumentOptions:
    return InstrumentOptions(size_invariant=not args.no_size_invariant,
                             loop_opt=not args.no_loop_opt,
                             hoist_negative_step=args.hoist_negative_step)


def _add_instrument_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-size-invariant", action="store_true",
                   help="check every access, never rely on the static type of the base")
    p.add_argument("--no-loop-opt", action="store_true", help="do not hoist checks out of loops")
    p.add_argument("--hoist-negative-step", action="store_true",
                   help="also hoist checks in loops whose induction variable decreases")


def _add_vm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--entry", default="main")
    p.add_argument("--step-limit", type=int, default=None)
    p.add_argument("--segment-size", type=int, default=DEFAULT_SEGMENT_SIZE)


# -- instrument -------------------------------------------------------------------

def cmd_instrument(args) -> int:
    m = load_module(args.input)
    try:
        r = instrument_module(m, options_from(args))
    except UnsupportedConstruct as e:
        raise CliError(f"{args.input}: unsupported construct: {e}") from None
    text = print_module(r.module)
    if args.output:
        Path(args.output).write_text(text)
    if args.dump_checked_ir or not args.output:
        sys.stdout.write(text)
    if args.dump_static_bases:
        for f in r.module.functions:
            sys.stdout.write(f"; static bases of @{f.name}\n")
            sys.stdout.write(r.static_bases[f.name].dump(f))
    if args.dump_stats:
        Path(args.dump_stats).write_text(json.dumps(r.stats.as_dict(), indent=2) + "\n")
    return 0


# -- run --------------------------------------------------------------------------

def _emit_reports(res: ExecResult, human: bool) -> None:
    for rep in res.reports:
        print(rep.human() if human else rep.to_json(), file=sys.stderr)
    if res.error:
        print(f"tagguard: vm error: {res.error}", file=sys.stderr)


def cmd_run(args) -> int:
    m = load_module(args.input)
    if not m.checked and not args.unchecked:
        raise CliError(f"{args.input} is not checked IR; instrument it first or pass --unchecked")
    res = execute(m, args.entry, args.argv, segment_size=args.segment_size,
                  step_limit=args.step_limit, trace=sys.stderr if args.trace else None)
    sys.stdout.write(res.stdout)
    sys.stdout.flush()
    _emit_reports(res, args.human)
    if args.stats:
        print(json.dumps({"counters": res.counters, "allocator": res.allocator}, sort_keys=True),
              file=sys.stderr)
    return res.exit_code


# -- diff -------------------------------------------------------------------------

_OUTPUT_SINKS = ("print", "exit")


def tag_sensitive_flows(m: Module) -> list[str]:
    """Places where an integer derived from a pointer reaches program output or control
    flow. Such programs legitimately behave differently once pointers carry tags."""
    found = []
    for f in m.functions:
        tainted: set[str] = set()
        changed = True
        while changed:
            changed = False
            for _, ins in f.instructions():
                if ins.result is None or ins.result in tainted:
                    continue
                if ins.op == "ptrtoint" or (
                        ins.op in ("binop", "conv", "phi", "select")
                        and any(u in tainted for u in ins.uses())):
                    tainted.add(ins.result)
                    changed = True
        for b, ins in f.instructions():
            hit = [u for u in ins.uses() if u in tainted]
            if not hit:
                continue
            sink = (ins.op == "intrinsic" and ins.sub in _OUTPUT_SINKS) or \
                ins.op in ("ret", "icmp", "condbr", "store", "call", "icall")
            if sink:
                found.append(f"@{f.name} {b.label}: %{hit[0]} flows into {ins.op}"
                             + (f" {ins.sub}" if ins.op == "intrinsic" else ""))
    return found


def _observable(res: ExecResult) -> list[str]:
    lines = [f"exit: {res.exit_code}"]
    if res.error:
        lines.append(f"vm error: {res.error}")
    for rep in res.reports:
        lines.append(f"violation: {rep.kind} @{rep.function} {rep.instr}")
    lines.extend(f"stdout: {l}" for l in res.stdout.splitlines())
    return lines


@dataclass
class DiffOutcome:
    verdict: str  # "equal", "differs" or "tag-sensitive, excluded"
    detail: list[str] = field(default_factory=list)


def diff_module(m: Module, argv=(), opts: InstrumentOptions | None = None, entry: str = "main",
                step_limit: int | None = None) -> DiffOutcome:
    sens = tag_sensitive_flows(m)
    if sens:
        return DiffOutcome("tag-sensitive, excluded", sens)
    plain = execute(m, entry, argv, step_limit=step_limit)
    checked = execute(instrument_module(m, opts).module, entry, argv, step_limit=step_limit)
    a, b = _observable(plain), _observable(checked)
    if a == b:
        return DiffOutcome("equal")
    delta = list(difflib.unified_diff(a, b, "plain", "instrumented", n=0, lineterm=""))
    return DiffOutcome("differs", delta)


def cmd_diff(args) -> int:
    m = load_module(args.input)
    if m.checked:
        raise CliError(f"{args.input} is already checked IR; diff expects a plain module")
    out = diff_module(m, args.argv, options_from(args), args.entry, args.step_limit)
    print(out.verdict)
    for line in out.detail:
        print(line)
    return 1 if out.verdict == "differs" else 0


# -- corpus -----------------------------------------------------------------------

@dataclass
class CorpusCase:
    name: str
    source: Path
    expect: dict
    flags: list[str] = field(default_factory=list)
    argv: list[int] = field(default_factory=list)
    stats: dict = field(default_factory=dict)  # expected instrumentation counters
    counters: dict = field(default_factory=dict)  # expected dynamic counters
    manifest: Path | None = None

    @classmethod
    def load(cls, path: Path) -> CorpusCase:
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"{path.name}: bad manifest: {e}") from None
        missing = {"name", "source", "expect"} - set(d)
        if missing:
            raise CliError(f"{path.name}: manifest lacks {', '.join(sorted(missing))}")
        outcome = d["expect"].get("outcome")
        if outcome not in ("ok", "violation", "equal", "excluded"):
            raise CliError(f"{path.name}: unknown expected outcome {outcome!r}")
        return cls(d["name"], path.parent / d["source"], d["expect"], list(d.get("flags", [])),
                   [int(a) for a in d.get("argv", [])], dict(d.get("stats", {})),
                   dict(d.get("counters", {})), path)


def _parse_case_flags(flags: list[str]) -> InstrumentOptions:
    p = argparse.ArgumentParser(add_help=False)
    _add_instrument_flags(p)
    ns, rest = p.parse_known_args(flags)
    if rest:
        raise CliError(f"unknown case flags: {' '.join(rest)}")
    return options_from(ns)


def run_case(case: CorpusCase) -> tuple[bool, str]:
    """Returns (passed, one-line description of what happened)."""
    try:
        m = load_module(case.source)
        opts = _parse_case_flags(case.flags)
        exp = case.expect
        if exp["outcome"] in ("equal", "excluded"):
            out = diff_module(m, case.argv, opts)
            want = "equal" if exp["outcome"] == "equal" else "tag-sensitive, excluded"
            return out.verdict == want, out.verdict
        r = instrument_module(m, opts)
        res = execute(r.module, "main", case.argv)
    except (CliError, UnsupportedConstruct) as e:
        return False, f"error: {e}"
    problems = []
    stats = r.stats.as_dict()
    for k, v in case.stats.items():
        if stats.get(k) != v:
            problems.append(f"stat {k}={stats.get(k)} (expected {v})")
    for k, v in case.counters.items():
        if res.counters.get(k) != v:
            problems.append(f"counter {k}={res.counters.get(k)} (expected {v})")
    rep = res.violation
    if exp["outcome"] == "ok":
        got = f"ok exit={res.exit_code}"
        if rep is not None:
            got = f"violation {rep.kind} @{rep.function} {rep.instr}"
            problems.append("unexpected violation")
        if res.error:
            problems.append(f"vm error: {res.error}")
        if res.exit_code != exp.get("exit", 0):
            problems.append(f"exit {res.exit_code} (expected {exp.get('exit', 0)})")
        if "stdout" in exp and res.stdout != exp["stdout"]:
            problems.append(f"stdout {res.stdout!r} (expected {exp['stdout']!r})")
    else:
        if rep is None:
            got = f"ok exit={res.exit_code}"
            problems.append("no violation reported")
        else:
            got = f"violation {rep.kind} @{rep.function} {rep.instr}"
            for key, actual in (("kind", rep.kind), ("function", rep.function),
                                ("instr", rep.instr)):
                if key in exp and exp[key] != actual:
                    problems.append(f"{key} {actual} (expected {exp[key]})")
    return not problems, got + ("" if not problems else " -- " + "; ".join(problems))


def cmd_corpus(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        raise CliError(f"{d} is not a directory")
    paths = sorted(d.glob("*.case.json"))
    if not paths:
        print("0 cases")
        return 0
    cases: list[CorpusCase | str] = []
    for p in paths:
        try:
            cases.append(CorpusCase.load(p))
        except CliError as e:
            cases.append(str(e))

    def one(c):
        return (False, c) if isinstance(c, str) else run_case(c)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as ex:
        results = list(ex.map(one, cases))
    width = max(len(c.name) if isinstance(c, CorpusCase) else 10 for c in cases)
    failed = 0
    for c, (ok, desc) in zip(cases, results):
        name = c.name if isinstance(c, CorpusCase) else "<manifest>"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {desc}")
    print(f"{len(cases)} cases, {len(cases) - failed} passed, {failed} failed")
    return 1 if failed else 0


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tagguard",
                                 description="Tagged-pointer bounds checking for MIR programs.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("instrument", help="write the checked version of a MIR module")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_instrument_flags(p)
    p.add_argument("--dump-stats", metavar="PATH", help="write instrumentation counters as JSON")
    p.add_argument("--dump-checked-ir", action="store_true",
                   help="print the checked IR even when -o is given")
    p.add_argument("--dump-static-bases", action="store_true")
    p.set_defaults(func=cmd_instrument)

    p = sub.add_parser("run", help="execute a checked module")
    p.add_argument("input")
    p.add_argument("argv", nargs="*", type=int)
    p.add_argument("--unchecked", action="store_true", help="allow running plain IR")
    p.add_argument("--stats", action="store_true", help="print runtime counters to stderr")
    p.add_argument("--trace", action="store_true", help="log every instruction to stderr")
    p.add_argument("--human", action="store_true", help="human-readable violation reports")
    _add_vm_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diff", help="compare plain and instrumented runs of a safe program")
    p.add_argument("input")
    p.add_argument("argv", nargs="*", type=int)
    _add_instrument_flags(p)
    p.add_argument("--entry", default="main")
    p.add_argument("--step-limit", type=int, default=None)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("corpus", help="run every *.case.json manifest in a directory")
    p.add_argument("dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_corpus)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"tagguard: error: {e}", file=sys.stderr)
        return USAGE_ERROR if args.command == "run" else 1


__all__ = ["main", "diff_module", "tag_sensitive_flows", "run_case", "CorpusCase"]
