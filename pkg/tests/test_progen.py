from __future__ import annotations

import pytest

from irlint import check_lint, escape_lint
from progen import arguments, generate, generate_overflowing
from tagguard.cli import diff_module
from tagguard.instrument import InstrumentOptions, instrument
from tagguard.mir import parse_module, validate_ssa
from tagguard.vm import execute

SEEDS = range(60)


def test_generator_is_deterministic():
    assert generate(5) == generate(5)
    assert generate(5) != generate(6)


@pytest.mark.parametrize("seed", SEEDS[::6])
def test_generated_programs_are_well_formed(seed):
    m = parse_module(generate(seed))
    assert validate_ssa(m) == []
    checked, stats = instrument(m)
    assert escape_lint(checked) == [] and check_lint(checked) == []
    assert stats.checks_inserted + stats.checks_elided > 0


@pytest.mark.parametrize("seed", SEEDS)
def test_generated_programs_behave_identically(seed):
    m = parse_module(generate(seed))
    for argv in arguments(seed):
        out = diff_module(m, argv)
        assert out.verdict == "equal", out.detail


@pytest.mark.parametrize("seed", SEEDS[::4])
def test_generated_programs_without_optimizations(seed):
    m = parse_module(generate(seed))
    opts = InstrumentOptions(size_invariant=False, loop_opt=False)
    assert diff_module(m, [1], opts).verdict == "equal"


@pytest.mark.parametrize("seed", SEEDS[::3])
def test_appended_overflow_is_caught(seed):
    m = parse_module(generate_overflowing(seed))
    plain = execute(m, argv=[0])
    assert plain.violation is None  # silently corrupts memory when unchecked
    r = execute(instrument(m)[0], argv=[0])
    assert r.violation is not None and r.violation.kind == "oob-write"
    assert r.stdout == plain.stdout
