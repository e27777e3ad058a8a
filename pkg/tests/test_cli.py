import json
import re
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest

from lpi.cli import main

CORPUS = Path(__file__).parent / "corpus"
RAT = re.compile(r"^-?\d+(/\d+)?$")


def call(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def analyze_json(capsys, name, *extra):
    code, out, _ = call(capsys, "analyze", CORPUS / f"{name}.c", "--format", "json", *extra)
    return code, json.loads(out)


def validate(rep):
    assert set(rep) >= {"invariants", "assertions", "stats", "config", "wall_ms"}
    for inv in rep["invariants"]:
        assert isinstance(inv["node"], str)
        for c in inv["constraints"]:
            assert isinstance(c["template"], str) and RAT.match(c["bound"])
    for a in rep["assertions"]:
        assert isinstance(a["line"], int) and a["status"] in ("proved", "unknown")
    for k in ("abstractions", "value_determinations", "lp_queries", "opt_branches"):
        assert isinstance(rep["stats"][k], int)
    assert isinstance(rep["config"], dict) and isinstance(rep["wall_ms"], int)


def test_two_loops_json(capsys):
    code, rep = analyze_json(capsys, "two_loops", "--domain", "intervals")
    assert code == 0
    validate(rep)
    heads = [inv for inv in rep["invariants"] if inv["node"] != "n0"]
    assert [h["line"] for h in heads] == [3, 5]  # the two while statements
    b = {c["template"]: Fraction(c["bound"]) for c in heads[-1]["constraints"]}
    assert b["i"] == 10 and b["j"] == 10


def test_missing_file(capsys):
    code, _, err = call(capsys, "analyze", "no/such/file.c")
    assert code == 2 and "lpi:" in err


def test_parse_error(tmp_path, capsys):
    f = tmp_path / "bad.c"
    f.write_text("int x = ;\n")
    code, _, err = call(capsys, "analyze", f)
    assert code == 2 and "1:" in err


def test_bad_usage(capsys):
    assert call(capsys, "analyze")[0] == 2
    assert call(capsys, "analyze", CORPUS / "two_loops.c", "--domain", "polyhedra")[0] == 2
    assert call(capsys, "analyze", CORPUS / "two_loops.c", "--opt-toggles", "widening")[0] == 2
    assert call(capsys, "analyze", CORPUS / "two_loops.c", "--unroll", "-1")[0] == 2


def test_buggy_refine(capsys):
    code, rep = analyze_json(capsys, "buggy", "--refine")
    assert code == 1
    assert rep["assertions"] and {a["status"] for a in rep["assertions"]} == {"unknown"}
    assert rep["config"]["ladder_step"] == 5


def test_refine_proves_lockstep(capsys):
    code, rep = analyze_json(capsys, "lockstep", "--refine")
    assert code == 0 and rep["config"]["ladder_step"] == 2


@pytest.mark.parametrize("name", sorted(p.stem for p in CORPUS.glob("*.c")))
def test_schema_and_determinism(capsys, name):
    _, a = analyze_json(capsys, name)
    _, b = analyze_json(capsys, name)
    validate(a)
    a.pop("wall_ms"), b.pop("wall_ms")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_text_output(capsys):
    code, out, _ = call(capsys, "analyze", CORPUS / "two_loops.c")
    assert code == 0
    lines = out.splitlines()
    assert any("i <= 10" in ln for ln in lines)
    assert "abstractions" not in out
    _, out, _ = call(capsys, "analyze", CORPUS / "two_loops.c", "--stats")
    assert "abstractions:" in out and "wall_ms:" in out


def test_text_lists_heads_in_order(capsys):
    _, out, _ = call(capsys, "analyze", CORPUS / "nested.c")
    lines = [int(re.search(r"line (\d+)", ln).group(1)) for ln in out.splitlines() if "(line" in ln]
    assert lines == sorted(lines)


def test_dump_cfa(capsys):
    code, out, _ = call(capsys, "analyze", CORPUS / "two_loops.c", "--dump-cfa")
    assert code == 0 and out.startswith("digraph")


def test_check_inductive_and_toggles(capsys):
    code, rep = analyze_json(capsys, "two_loops", "--check-inductive", "--opt-toggles", "input-independence,syntactic-skip")
    assert code == 0
    assert rep["config"]["input_independence"] is False and rep["config"]["syntactic_skip"] is False


def test_relaxed_mode(capsys):
    code, rep = analyze_json(capsys, "halving", "--integer-mode", "relaxed", "--domain", "octagons")
    assert rep["config"]["integer_mode"] == "relaxed"


def test_console_entry_point():
    p = subprocess.run(
        [sys.executable, "-m", "lpi.cli", "analyze", str(CORPUS / "two_loops.c"), "--format", "json"],
        capture_output=True, text=True, check=False,
    )
    assert p.returncode == 0 and json.loads(p.stdout)["invariants"]
