from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from conftest import CORPUS
from tagguard.cli import main, tag_sensitive_flows
from tagguard.instrument import STATS_SCHEMA
from tagguard.mir import parse_module


@pytest.fixture
def checked(tmp_path):
    """Instrument a corpus program into tmp_path and return the checked file."""
    def make(name, *flags):
        out = tmp_path / f"{name}.checked.mir"
        assert main(["instrument", str(CORPUS / f"{name}.mir"), "-o", str(out), *flags]) == 0
        return out
    return make


def test_instrument_writes_checked_ir_and_stats(tmp_path, capsys):
    out, stats = tmp_path / "f.mir", tmp_path / "s.json"
    rc = main(["instrument", str(CORPUS / "foobar.mir"), "-o", str(out), "--dump-stats",
               str(stats)])
    assert rc == 0
    assert capsys.readouterr().out == ""
    assert parse_module(out.read_text()).checked
    s = json.loads(stats.read_text())
    assert s["schema"] == STATS_SCHEMA
    assert list(s) == ["schema", "checks_inserted", "checks_elided", "checks_hoisted",
                       "tag_updates_inserted", "tag_updates_exempted"]
    assert s["tag_updates_inserted"] == 3 and s["tag_updates_exempted"] >= 1


def test_instrument_is_deterministic(tmp_path, capsys):
    main(["instrument", str(CORPUS / "qsort.mir")])
    a = capsys.readouterr().out
    main(["instrument", str(CORPUS / "qsort.mir")])
    assert capsys.readouterr().out == a and "\n!checked\n" in a


@pytest.mark.parametrize("name,flag,key,check", [
    ("foobar", "--no-size-invariant", "checks_elided", lambda v: v == 0),
    ("loop_hoist", None, "checks_hoisted", lambda v: v >= 1),
    ("loop_hoist", "--no-loop-opt", "checks_hoisted", lambda v: v == 0),
])
def test_instrument_flags(tmp_path, name, flag, key, check):
    stats = tmp_path / "s.json"
    args = ["instrument", str(CORPUS / f"{name}.mir"), "-o", str(tmp_path / "o.mir"),
            "--dump-stats", str(stats)] + ([flag] if flag else [])
    assert main(args) == 0
    assert check(json.loads(stats.read_text())[key])


def test_instrument_dumps_static_bases(capsys):
    main(["instrument", str(CORPUS / "foobar.mir"), "--dump-static-bases"])
    assert "; static bases of @bar" in capsys.readouterr().out


def test_instrument_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.mir"
    bad.write_text("func @main( -> i32 {\n")
    assert main(["instrument", str(bad)]) == 1
    assert "bad.mir:1:" in capsys.readouterr().err


def test_instrument_refuses_checked_input(checked, capsys):
    out = checked("foobar")
    assert main(["instrument", str(out)]) == 1
    assert "unsupported construct" in capsys.readouterr().err


def test_run_safe_program(checked, capsys):
    assert main(["run", str(checked("foobar")), "3"]) == 0


def test_run_off_by_one_reports_json(checked, capsys):
    rc = main(["run", str(checked("heap_off_by_one")), "10"])
    assert rc == 10
    rep = json.loads(capsys.readouterr().err.splitlines()[0])
    assert (rep["kind"], rep["function"], rep["instr"]) == ("oob-write", "fill", "body.2")


def test_run_recovery_with_stats(checked, capsys):
    assert main(["run", str(checked("struct_info")), "--stats"]) == 0
    cap = capsys.readouterr()
    assert cap.out == "2\n"
    assert json.loads(cap.err.splitlines()[-1])["counters"]["recoveries"] == 1


def test_run_human_report(checked, capsys):
    main(["run", str(checked("heap_off_by_one")), "10", "--human"])
    assert "oob-write in @fill" in capsys.readouterr().err


def test_run_requires_checked_ir(capsys):
    src = str(CORPUS / "foobar.mir")
    assert main(["run", src, "3"]) == 2
    assert "--unchecked" in capsys.readouterr().err
    assert main(["run", src, "3", "--unchecked"]) == 0


def test_run_vm_error_is_surfaced(tmp_path, capsys):
    p = tmp_path / "spin.mir"
    p.write_text("func @main() -> i32 {\nentry:\n  br entry2\nentry2:\n  br entry2\n}\n")
    assert main(["run", str(p), "--unchecked", "--step-limit", "50"]) == 2
    assert "step limit" in capsys.readouterr().err


def test_run_missing_file(capsys):
    assert main(["run", "/nonexistent.mir"]) == 2
    assert "cannot read" in capsys.readouterr().err


@pytest.mark.parametrize("name,argv,verdict,rc", [
    ("foobar", ["3"], "equal", 0),
    ("ptr_compare", [], "equal", 0),
    ("ptrtoint_print", [], "tag-sensitive, excluded", 0),
])
def test_diff(name, argv, verdict, rc, capsys):
    assert main(["diff", str(CORPUS / f"{name}.mir"), *argv]) == rc
    assert capsys.readouterr().out.splitlines()[0] == verdict


def test_diff_reports_differences(capsys):
    # an unsafe program behaves differently once checked
    assert main(["diff", str(CORPUS / "heap_off_by_one.mir"), "10"]) == 1
    out = capsys.readouterr().out
    assert out.startswith("differs")
    assert "+violation: oob-write @fill body.2" in out


def test_tag_sensitive_detector_ignores_plain_programs():
    assert tag_sensitive_flows(parse_module((CORPUS / "qsort.mir").read_text())) == []


def test_corpus_all_pass(capsys):
    assert main(["corpus", str(CORPUS), "--jobs", "4"]) == 0
    last = capsys.readouterr().out.splitlines()[-1]
    n = len(list(CORPUS.glob("*.case.json")))
    assert last == f"{n} cases, {n} passed, 0 failed"


def test_corpus_wrong_expectation_fails_exactly_that_case(tmp_path, capsys):
    for p in CORPUS.iterdir():
        shutil.copy(p, tmp_path)
    case = tmp_path / "double-free.case.json"
    d = json.loads(case.read_text())
    d["expect"]["kind"] = "oob-read"
    case.write_text(json.dumps(d))
    assert main(["corpus", str(tmp_path)]) == 1
    lines = capsys.readouterr().out.splitlines()
    failed = [l for l in lines if l.startswith("FAIL")]
    assert len(failed) == 1 and "double-free" in failed[0]
    assert lines[-1].endswith("1 failed")


def test_corpus_bad_manifest_is_reported(tmp_path, capsys):
    (tmp_path / "x.case.json").write_text("{}")
    assert main(["corpus", str(tmp_path)]) == 1
    assert "manifest lacks" in capsys.readouterr().out


def test_corpus_empty_dir(tmp_path, capsys):
    assert main(["corpus", str(tmp_path)]) == 0
    assert capsys.readouterr().out == "0 cases\n"


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "tagguard", "corpus", str(CORPUS / "missing")],
                       capture_output=True, text=True)
    assert r.returncode == 1 and "not a directory" in r.stderr
